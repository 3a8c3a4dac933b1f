//! Karma game definition: sets, cost and discount maps, and the probabilistic
//! and logic functions that describe one interaction.
//!
//! Outcomes follow the binary encoding used throughout the crate: `0` means
//! the participant did not receive the resource, `1` means it did.

mod config;
mod state;
pub mod templates;

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::RngCore;

use crate::error::{Error, Result};

pub use config::{CostConfig, GameConfig, TemplateSpec, TypeConfig};
pub use state::{
    build_initial_distribution, build_initial_policy, DistributionInit, PolicyInit, SocialState,
};

/// Karma balance of one agent.
pub type Karma = u32;
/// A bid, in Karma units.
pub type Bid = u32;

pub const LOSE: u8 = 0;
pub const WIN: u8 = 1;
pub const NUM_OUTCOMES: usize = 2;

/// Per-participant outcome vector of one interaction.
pub type JointOutcome = Vec<u8>;

/// Θ: distribution over joint outcomes given the participants' bids.
pub trait OutcomeModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Joint outcomes with non-zero probability. Probabilities sum to 1.
    fn distribution(&self, bids: &[Bid]) -> Result<Vec<(JointOutcome, f64)>>;

    fn sample(&self, bids: &[Bid], rng: &mut dyn RngCore) -> Result<JointOutcome> {
        let dist = self.distribution(bids)?;
        Ok(sample_weighted(&dist, rng).clone())
    }
}

/// Ω: distribution of a participant's next balance given its balance, all
/// bids and its own outcome. Overflow redistribution is not part of Ω; it is
/// accounted for separately through [`KarmaTransitionModel::to_overflow`].
pub trait KarmaTransitionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn next_karma(
        &self,
        karma: Karma,
        bids: &[Bid],
        own: usize,
        own_outcome: u8,
    ) -> Result<Vec<(Karma, f64)>>;

    /// Karma this participant pays into the overflow account.
    fn to_overflow(&self, _bids: &[Bid], _own: usize, _own_outcome: u8) -> Karma {
        0
    }
}

/// Ψ: urgency transition for one type.
pub trait UrgencyTransitionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn num_levels(&self) -> usize;

    fn prob(&self, ty: usize, next: usize, now: usize, own_outcome: u8) -> f64;

    fn sample(&self, ty: usize, now: usize, own_outcome: u8, rng: &mut dyn RngCore) -> usize {
        let draw = unit_draw(rng);
        let mut acc = 0.0;
        let last = self.num_levels() - 1;
        for next in 0..=last {
            acc += self.prob(ty, next, now, own_outcome);
            if draw < acc {
                return next;
            }
        }
        last
    }
}

/// Result of the payment step of one interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payments {
    /// Balance change per participant (positive means receiving).
    pub deltas: Vec<i64>,
    /// Karma moved into the overflow account.
    pub to_overflow: i64,
}

/// Logic counterpart of Ω used by the simulator.
pub trait PaymentRule: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn payments(&self, karma: &[Karma], bids: &[Bid], outcome: &[u8]) -> Result<Payments>;
}

/// Distributes the overflow pot back to the population.
pub trait OverflowRule: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// Per-agent credits; they sum to `pot`.
    fn distribute(&self, karma: &[Karma], pot: u64, rng: &mut dyn RngCore) -> Vec<u64>;
    /// Whether the pot flows back to every agent. The equilibrium model then
    /// credits participants with the expected per-participant inflow.
    fn redistributes(&self) -> bool;
}

/// Wealth redistribution between agents; deltas sum to zero.
pub trait RedistributionRule: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn redistribute(&self, karma: &[Karma], rng: &mut dyn RngCore) -> Vec<i64>;
}

/// Logic functions used by the multi-agent simulation.
#[derive(Debug, Clone)]
pub struct SimulationLogic {
    pub outcome: Arc<dyn OutcomeModel>,
    pub payment: Arc<dyn PaymentRule>,
    pub urgency: Arc<dyn UrgencyTransitionModel>,
    pub overflow: Arc<dyn OverflowRule>,
    pub redistribution: Arc<dyn RedistributionRule>,
}

/// A temporal-preference type.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentType {
    pub name: String,
    /// Discount factor T[τ], in [0, 1).
    pub discount: f64,
    /// Population share of the type.
    pub share: f64,
}

/// Immutable definition of a Karma game.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub num_agents: usize,
    pub participants: usize,
    pub types: Vec<AgentType>,
    /// Numeric labels of the urgency levels, in index order.
    pub urgencies: Vec<f64>,
    pub initial_avg_karma: Karma,
    /// C[u, o], indexed by urgency index and outcome.
    pub cost: Array2<f64>,
    pub outcome_model: Arc<dyn OutcomeModel>,
    pub karma_model: Arc<dyn KarmaTransitionModel>,
    pub urgency_model: Arc<dyn UrgencyTransitionModel>,
    pub payment_rule: Arc<dyn PaymentRule>,
    pub overflow: Arc<dyn OverflowRule>,
    pub redistribution: Arc<dyn RedistributionRule>,
}

impl GameSpec {
    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn num_urgencies(&self) -> usize {
        self.urgencies.len()
    }

    pub fn discount(&self, ty: usize) -> f64 {
        self.types[ty].discount
    }

    pub fn type_shares(&self) -> Vec<f64> {
        self.types.iter().map(|t| t.share).collect()
    }

    pub fn logic(&self) -> SimulationLogic {
        SimulationLogic {
            outcome: Arc::clone(&self.outcome_model),
            payment: Arc::clone(&self.payment_rule),
            urgency: Arc::clone(&self.urgency_model),
            overflow: Arc::clone(&self.overflow),
            redistribution: Arc::clone(&self.redistribution),
        }
    }

    /// Checks the structural invariants of the game.
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::Validation("num_agents must be positive".into()));
        }
        if self.participants < 2 {
            return Err(Error::Validation(
                "an interaction needs at least two participants".into(),
            ));
        }
        if self.participants > self.num_agents {
            return Err(Error::Validation(format!(
                "participants per interaction ({}) exceed num_agents ({})",
                self.participants, self.num_agents
            )));
        }
        if self.types.is_empty() || self.urgencies.is_empty() {
            return Err(Error::Validation(
                "types and urgencies must be non-empty".into(),
            ));
        }
        for t in &self.types {
            if !(0.0..1.0).contains(&t.discount) {
                return Err(Error::Validation(format!(
                    "discount of type '{}' is {}, must lie in [0, 1)",
                    t.name, t.discount
                )));
            }
        }
        check_normalized("type shares", &self.type_shares())?;
        if self.cost.dim() != (self.urgencies.len(), NUM_OUTCOMES) {
            return Err(Error::Validation(format!(
                "cost table has shape {:?}, expected ({}, {NUM_OUTCOMES})",
                self.cost.dim(),
                self.urgencies.len()
            )));
        }
        if self.cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Validation(
                "costs must be finite and non-negative".into(),
            ));
        }
        if self.urgency_model.num_levels() != self.urgencies.len() {
            return Err(Error::Validation(format!(
                "urgency model has {} levels but the game declares {}",
                self.urgency_model.num_levels(),
                self.urgencies.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_normalized(what: &str, weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Validation(format!("{what} must be non-negative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "{what} sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Uniform draw in [0, 1) with 53 bits of precision.
pub(crate) fn unit_draw(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn sample_weighted<'a, T>(items: &'a [(T, f64)], rng: &mut dyn RngCore) -> &'a T {
    let draw = unit_draw(rng);
    let mut acc = 0.0;
    for (item, p) in items {
        acc += p;
        if draw < acc {
            return item;
        }
    }
    // Rounding can leave `acc` a hair below 1.
    &items
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .unwrap_or(&items[items.len() - 1])
        .0
}
