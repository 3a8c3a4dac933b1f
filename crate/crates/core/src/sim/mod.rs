//! Discrete-epoch multi-agent simulation of a Karma economy under a fixed
//! policy.
//!
//! Each epoch runs a number of interactions, then closes: participants draw
//! their next urgency, the overflow pot is paid out, and the redistribution
//! rule is applied. Karma is integer throughout, so Σk + Z is conserved
//! exactly.

mod export;

use std::collections::BTreeMap;

use ndarray::{Array2, Array4};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_weighted, Bid, GameSpec, Karma, SimulationLogic, SocialState};
use crate::rng::{component_rng, fnv1a};

pub use export::{
    read_participant_list, write_agents, write_epoch_summaries, write_interactions,
    write_transitions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub ty: usize,
    /// Urgency level index.
    pub urgency: usize,
    pub karma: Karma,
    pub cumulative_cost: f64,
    pub encounters: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<Agent>,
    /// Overflow account Z.
    pub overflow: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn total_karma(&self) -> u64 {
        self.agents.iter().map(|a| u64::from(a.karma)).sum()
    }

    /// Σk + Z.
    pub fn ledger(&self) -> u64 {
        self.total_karma() + self.overflow
    }

    pub fn mean_karma(&self) -> f64 {
        self.total_karma() as f64 / self.len() as f64
    }

    pub fn karma(&self) -> Vec<Karma> {
        self.agents.iter().map(|a| a.karma).collect()
    }

    /// FNV-1a digest of every agent record, the pot and the epoch counter.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.agents.len() * 32 + 16);
        for a in &self.agents {
            bytes.extend_from_slice(&(a.ty as u64).to_le_bytes());
            bytes.extend_from_slice(&(a.urgency as u64).to_le_bytes());
            bytes.extend_from_slice(&a.karma.to_le_bytes());
            bytes.extend_from_slice(&a.cumulative_cost.to_bits().to_le_bytes());
            bytes.extend_from_slice(&a.encounters.to_le_bytes());
        }
        bytes.extend_from_slice(&self.overflow.to_le_bytes());
        bytes.extend_from_slice(&self.epoch.to_le_bytes());
        fnv1a(&bytes)
    }
}

/// How initial balances are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// (τ, u, k) drawn i.i.d. from the equilibrium distribution, redrawn
    /// until the mean balance is within 2/√n of the mean of d.
    FromEquilibrium,
    /// Everyone holds the average initial Karma; type and urgency follow d.
    EqualEndowment,
}

/// Whole-population redraws allowed while matching the target mean.
const INIT_REDRAWS: usize = 1000;

pub fn init_population(
    spec: &GameSpec,
    state: &SocialState,
    mode: InitMode,
    n: usize,
    seed: u64,
) -> Result<Population> {
    if n == 0 {
        return Err(Error::Validation("population must not be empty".into()));
    }
    if (n as u64).checked_mul(u64::from(spec.initial_avg_karma)).is_none() {
        return Err(Error::Range(format!(
            "{n} agents × {} Karma overflows the ledger",
            spec.initial_avg_karma
        )));
    }
    if state.num_types() != spec.num_types() || state.num_urgencies() != spec.num_urgencies() {
        return Err(Error::Validation(
            "equilibrium state does not match the game's types and urgencies".into(),
        ));
    }
    let mass = state.total_mass();
    if !(mass > 0.0) {
        return Err(Error::Validation("distribution has zero mass".into()));
    }
    let cells: Vec<((usize, usize, usize), f64)> = state
        .distribution
        .indexed_iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|(ix, v)| (ix, v / mass))
        .collect();
    let mut rng = component_rng(seed, "sim.init");
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Agent> {
        (0..n)
            .map(|_| {
                let (t, u, k) = *sample_weighted(&cells, rng);
                let karma = match mode {
                    InitMode::FromEquilibrium => k as Karma,
                    InitMode::EqualEndowment => spec.initial_avg_karma,
                };
                Agent {
                    ty: t,
                    urgency: u,
                    karma,
                    cumulative_cost: 0.0,
                    encounters: 0,
                }
            })
            .collect()
    };
    // Redraw until the sample mean lands within 2/sqrt(n) of the mean of d
    // (the average initial Karma for any equilibrium); keep the closest draw
    // if that never happens.
    let target: f64 = cells.iter().map(|((_, _, k), w)| *k as f64 * w).sum();
    let window = 2.0 / (n as f64).sqrt();
    let gap = |agents: &[Agent]| {
        let total: u64 = agents.iter().map(|a| u64::from(a.karma)).sum();
        (total as f64 / n as f64 - target).abs()
    };
    let mut agents = draw(&mut rng);
    let mut best_gap = gap(&agents);
    for _ in 1..INIT_REDRAWS {
        if best_gap <= window {
            break;
        }
        let next = draw(&mut rng);
        let g = gap(&next);
        if g < best_gap {
            agents = next;
            best_gap = g;
        }
    }
    Ok(Population {
        agents,
        overflow: 0,
        epoch: 0,
        seed,
    })
}

/// What happened in one interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub epoch: u64,
    pub participants: Vec<usize>,
    pub karma_before: Vec<Karma>,
    pub bids: Vec<Bid>,
    pub outcome: Vec<u8>,
    pub deltas: Vec<i64>,
    pub to_overflow: i64,
}

fn sample_bid(policy: &Array4<f64>, agent: &Agent, rng: &mut dyn RngCore) -> Bid {
    let (_, _, nk, na) = policy.dim();
    let k = (agent.karma as usize).min(nk - 1);
    let row = policy.slice(ndarray::s![agent.ty, agent.urgency, k, ..]);
    let draw: f64 = rng.gen::<f64>() * row.sum();
    let mut acc = 0.0;
    let top = k.min(na - 1);
    for a in 0..=top {
        acc += row[a];
        if draw < acc {
            return a as Bid;
        }
    }
    // Rounding at the end of the row: largest bid with positive mass.
    (0..=top).rev().find(|a| row[*a] > 0.0).unwrap_or(0) as Bid
}

/// One interaction: bids from π, outcome, payments, costs and encounters.
pub fn execute_interaction(
    population: &mut Population,
    participants: &[usize],
    policy: &Array4<f64>,
    logic: &SimulationLogic,
    cost: &Array2<f64>,
    rng: &mut dyn RngCore,
) -> Result<InteractionRecord> {
    for (i, p) in participants.iter().enumerate() {
        if *p >= population.len() {
            return Err(Error::Contract(format!("agent index {p} out of range")));
        }
        if participants[..i].contains(p) {
            return Err(Error::Contract(format!("agent {p} appears twice")));
        }
    }
    let karma_before: Vec<Karma> = participants
        .iter()
        .map(|p| population.agents[*p].karma)
        .collect();
    let bids: Vec<Bid> = participants
        .iter()
        .map(|p| sample_bid(policy, &population.agents[*p], rng))
        .collect();
    let outcome = logic.outcome.sample(&bids, rng)?;
    let pay = logic.payment.payments(&karma_before, &bids, &outcome)?;
    let net: i64 = pay.deltas.iter().sum::<i64>() + pay.to_overflow;
    if net != 0 || pay.to_overflow < 0 {
        return Err(Error::Contract(format!(
            "payment rule {} does not conserve Karma",
            logic.payment.name()
        )));
    }
    for (j, p) in participants.iter().enumerate() {
        let agent = &mut population.agents[*p];
        let next = i64::from(agent.karma) + pay.deltas[j];
        agent.karma = Karma::try_from(next).map_err(|_| {
            Error::Contract(format!("agent {p} would hold {next} Karma"))
        })?;
        agent.cumulative_cost += cost[[agent.urgency, outcome[j] as usize]];
        agent.encounters += 1;
    }
    population.overflow += pay.to_overflow as u64;
    Ok(InteractionRecord {
        epoch: population.epoch,
        participants: participants.to_vec(),
        karma_before,
        bids,
        outcome,
        deltas: pay.deltas,
        to_overflow: pay.to_overflow,
    })
}

/// Where each interaction's participants come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParticipantSource {
    /// Drawn uniformly without replacement from the whole population.
    Uniform,
    /// Tuples consumed in order, e.g. from an outside traffic simulator.
    External(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub epochs: u64,
    pub interactions_per_epoch: usize,
    /// Full snapshot every this many epochs, plus the first and last.
    pub snapshot_every: u64,
    /// Keep every interaction in the trace.
    pub record_interactions: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            interactions_per_epoch: 1,
            snapshot_every: 100,
            record_interactions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub interactions: usize,
    pub total_karma: u64,
    pub overflow: u64,
    pub mean_cost: f64,
    pub digest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: u64,
    pub karma: Vec<Karma>,
    pub urgency: Vec<usize>,
    pub cumulative_cost: Vec<f64>,
}

impl Snapshot {
    fn of(population: &Population) -> Self {
        Self {
            epoch: population.epoch,
            karma: population.karma(),
            urgency: population.agents.iter().map(|a| a.urgency).collect(),
            cumulative_cost: population.agents.iter().map(|a| a.cumulative_cost).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub summaries: Vec<EpochSummary>,
    pub snapshots: Vec<Snapshot>,
    /// Counts of (balance before, balance after) per participant and
    /// interaction, payments only.
    pub transitions: BTreeMap<(Karma, Karma), u64>,
    pub interactions: Vec<InteractionRecord>,
    pub population: Population,
}

impl Trace {
    /// Final share of agents per Karma balance, `0..=max`.
    pub fn karma_histogram(&self) -> Vec<f64> {
        karma_histogram(&self.population.karma())
    }

    pub fn cumulative_costs(&self) -> Vec<f64> {
        self.population
            .agents
            .iter()
            .map(|a| a.cumulative_cost)
            .collect()
    }

    pub fn mean_encounters(&self) -> f64 {
        let n = self.population.len() as f64;
        self.population
            .agents
            .iter()
            .map(|a| a.encounters as f64)
            .sum::<f64>()
            / n
    }
}

pub fn karma_histogram(karma: &[Karma]) -> Vec<f64> {
    let top = karma.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0.0; top + 1];
    for k in karma {
        h[*k as usize] += 1.0;
    }
    let n = karma.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Sample skewness (third standardized moment).
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Total-variation distance between two distributions over 0..; missing
/// tail entries count as zero.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

fn close_epoch(
    population: &mut Population,
    logic: &SimulationLogic,
    participations: &[(usize, u8)],
    rng: &mut dyn RngCore,
) -> Result<()> {
    for (i, outcome) in participations {
        let agent = &mut population.agents[*i];
        agent.urgency = logic.urgency.sample(agent.ty, agent.urgency, *outcome, rng);
    }
    let karma = population.karma();
    if population.overflow > 0 {
        let credits = logic.overflow.distribute(&karma, population.overflow, rng);
        let paid: u64 = credits.iter().sum();
        if paid > population.overflow || credits.len() != karma.len() {
            return Err(Error::Contract(format!(
                "overflow rule {} paid out {paid} from a pot of {}",
                logic.overflow.name(),
                population.overflow
            )));
        }
        for (agent, c) in population.agents.iter_mut().zip(&credits) {
            agent.karma += *c as Karma;
        }
        population.overflow -= paid;
    }
    let karma = population.karma();
    let deltas = logic.redistribution.redistribute(&karma, rng);
    if !deltas.is_empty() {
        if deltas.len() != karma.len() || deltas.iter().sum::<i64>() != 0 {
            return Err(Error::Contract(format!(
                "redistribution rule {} does not conserve Karma",
                logic.redistribution.name()
            )));
        }
        for (i, (agent, d)) in population.agents.iter_mut().zip(&deltas).enumerate() {
            let next = i64::from(agent.karma) + d;
            agent.karma = Karma::try_from(next).map_err(|_| {
                Error::Contract(format!("redistribution leaves agent {i} at {next}"))
            })?;
        }
    }
    Ok(())
}

/// Runs `config.epochs` epochs from `population`.
pub fn run(
    mut population: Population,
    policy: &Array4<f64>,
    spec: &GameSpec,
    config: &SimConfig,
    source: &ParticipantSource,
) -> Result<Trace> {
    if config.epochs == 0 {
        return Err(Error::Validation("epochs must be at least 1".into()));
    }
    let (nt, nu, _, _) = policy.dim();
    if nt != spec.num_types() || nu != spec.num_urgencies() {
        return Err(Error::Validation(
            "policy does not match the game's types and urgencies".into(),
        ));
    }
    let arity = spec.participants;
    if let ParticipantSource::External(list) = source {
        if let Some(bad) = list.iter().find(|t| t.len() != arity) {
            return Err(Error::Contract(format!(
                "participant tuple {bad:?} has {} entries, expected {arity}",
                bad.len()
            )));
        }
        let needed = config.epochs as usize * config.interactions_per_epoch;
        if list.len() < needed {
            return Err(Error::Contract(format!(
                "external list holds {} interactions, the run needs {needed}",
                list.len()
            )));
        }
    } else if arity > population.len() {
        return Err(Error::Validation(format!(
            "{arity} participants cannot be drawn from {} agents",
            population.len()
        )));
    }

    let logic = spec.logic();
    let mut rng = component_rng(population.seed, "sim.run");
    let ledger = population.ledger();
    let mut trace = Trace {
        summaries: Vec::with_capacity(config.epochs as usize),
        snapshots: vec![Snapshot::of(&population)],
        transitions: BTreeMap::new(),
        interactions: Vec::new(),
        population: population.clone(),
    };
    let mut next_external = 0usize;
    let mut participations = Vec::new();
    let mut chosen = Vec::with_capacity(arity);

    for _ in 0..config.epochs {
        participations.clear();
        for _ in 0..config.interactions_per_epoch {
            chosen.clear();
            match source {
                ParticipantSource::Uniform => {
                    chosen.extend(sample_indices(&mut rng, population.len(), arity).iter());
                }
                ParticipantSource::External(list) => {
                    chosen.extend_from_slice(&list[next_external]);
                    next_external += 1;
                }
            }
            let record =
                execute_interaction(&mut population, &chosen, policy, &logic, &spec.cost, &mut rng)?;
            for (j, p) in record.participants.iter().enumerate() {
                let after = population.agents[*p].karma;
                *trace
                    .transitions
                    .entry((record.karma_before[j], after))
                    .or_insert(0) += 1;
                participations.push((*p, record.outcome[j]));
            }
            if config.record_interactions {
                trace.interactions.push(record);
            }
        }
        close_epoch(&mut population, &logic, &participations, &mut rng)?;
        population.epoch += 1;

        if population.ledger() != ledger {
            return Err(Error::Contract(format!(
                "Karma ledger moved from {ledger} to {} in epoch {}",
                population.ledger(),
                population.epoch
            )));
        }
        let n = population.len() as f64;
        trace.summaries.push(EpochSummary {
            epoch: population.epoch,
            interactions: config.interactions_per_epoch,
            total_karma: population.total_karma(),
            overflow: population.overflow,
            mean_cost: population
                .agents
                .iter()
                .map(|a| a.cumulative_cost)
                .sum::<f64>()
                / n,
            digest: population.digest(),
        });
        let last = population.epoch == trace.snapshots[0].epoch + config.epochs;
        if last || (config.snapshot_every > 0 && population.epoch % config.snapshot_every == 0) {
            trace.snapshots.push(Snapshot::of(&population));
        }
    }
    trace.population = population;
    Ok(trace)
}

#[cfg(test)]
mod tests;
