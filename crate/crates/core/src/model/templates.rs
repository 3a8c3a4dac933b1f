//! Standard interaction rules: highest-bid and threshold auctions, pay-to-peer
//! and pay-to-society payments, i.i.d. urgency and uniform overflow.

use rand::seq::index;
use rand::RngCore;

use super::{
    Bid, JointOutcome, Karma, KarmaTransitionModel, OutcomeModel, OverflowRule, PaymentRule,
    Payments, RedistributionRule, UrgencyTransitionModel, LOSE, WIN,
};
use crate::error::{Error, Result};

fn check_arity(model: &'static str, expected: usize, bids: &[Bid]) -> Result<()> {
    if bids.len() != expected {
        return Err(Error::Arity {
            model,
            expected,
            got: bids.len(),
        });
    }
    Ok(())
}

/// Highest bid among the qualifying participants wins; ties are broken
/// uniformly at random. Nobody wins if no bid qualifies.
fn auction(bids: &[Bid], threshold: Bid) -> Vec<(JointOutcome, f64)> {
    let best = bids.iter().copied().filter(|b| *b >= threshold).max();
    let Some(best) = best else {
        return vec![(vec![LOSE; bids.len()], 1.0)];
    };
    let leaders: Vec<usize> = (0..bids.len()).filter(|j| bids[*j] == best).collect();
    let p = 1.0 / leaders.len() as f64;
    leaders
        .into_iter()
        .map(|winner| {
            let mut outcome = vec![LOSE; bids.len()];
            outcome[winner] = WIN;
            (outcome, p)
        })
        .collect()
}

/// The highest bidder receives the resource; equal bids are settled by a fair
/// coin (uniformly among all tied participants).
#[derive(Debug, Clone)]
pub struct HighestBid {
    participants: usize,
}

impl HighestBid {
    pub fn new(participants: usize) -> Self {
        Self { participants }
    }
}

impl Default for HighestBid {
    fn default() -> Self {
        Self::new(2)
    }
}

impl OutcomeModel for HighestBid {
    fn name(&self) -> &'static str {
        "highest_bid"
    }

    fn distribution(&self, bids: &[Bid]) -> Result<Vec<(JointOutcome, f64)>> {
        check_arity(self.name(), self.participants, bids)?;
        Ok(auction(bids, 0))
    }
}

/// Highest bid wins, but only if it reaches the threshold price.
#[derive(Debug, Clone)]
pub struct ThresholdAuction {
    pub threshold: Bid,
    participants: usize,
}

impl ThresholdAuction {
    pub fn new(threshold: Bid, participants: usize) -> Self {
        Self {
            threshold,
            participants,
        }
    }
}

impl OutcomeModel for ThresholdAuction {
    fn name(&self) -> &'static str {
        "threshold_auction"
    }

    fn distribution(&self, bids: &[Bid]) -> Result<Vec<(JointOutcome, f64)>> {
        check_arity(self.name(), self.participants, bids)?;
        Ok(auction(bids, self.threshold))
    }
}

fn winner(outcome: &[u8]) -> Option<usize> {
    outcome.iter().position(|o| *o == WIN)
}

/// The winner pays its bid to the other participant.
#[derive(Debug, Clone, Default)]
pub struct PayBidToPeer;

impl KarmaTransitionModel for PayBidToPeer {
    fn name(&self) -> &'static str {
        "pay_to_peer"
    }

    fn next_karma(
        &self,
        karma: Karma,
        bids: &[Bid],
        own: usize,
        own_outcome: u8,
    ) -> Result<Vec<(Karma, f64)>> {
        check_arity("pay_to_peer", 2, bids)?;
        let next = if own_outcome == WIN {
            karma.checked_sub(bids[own]).ok_or_else(|| {
                Error::Contract(format!("bid {} exceeds balance {karma}", bids[own]))
            })?
        } else {
            karma + bids[1 - own]
        };
        Ok(vec![(next, 1.0)])
    }
}

impl PaymentRule for PayBidToPeer {
    fn name(&self) -> &'static str {
        "pay_to_peer"
    }

    fn payments(&self, karma: &[Karma], bids: &[Bid], outcome: &[u8]) -> Result<Payments> {
        check_arity("pay_to_peer", 2, bids)?;
        let mut deltas = vec![0i64; 2];
        if let Some(w) = winner(outcome) {
            if bids[w] > karma[w] {
                return Err(Error::Contract(format!(
                    "bid {} exceeds balance {}",
                    bids[w], karma[w]
                )));
            }
            deltas[w] = -i64::from(bids[w]);
            deltas[1 - w] = i64::from(bids[w]);
        }
        Ok(Payments {
            deltas,
            to_overflow: 0,
        })
    }
}

/// The winner pays its bid into the overflow account.
#[derive(Debug, Clone, Default)]
pub struct PayBidToSociety;

impl KarmaTransitionModel for PayBidToSociety {
    fn name(&self) -> &'static str {
        "pay_to_society"
    }

    fn next_karma(
        &self,
        karma: Karma,
        bids: &[Bid],
        own: usize,
        own_outcome: u8,
    ) -> Result<Vec<(Karma, f64)>> {
        let next = if own_outcome == WIN {
            karma.checked_sub(bids[own]).ok_or_else(|| {
                Error::Contract(format!("bid {} exceeds balance {karma}", bids[own]))
            })?
        } else {
            karma
        };
        Ok(vec![(next, 1.0)])
    }

    fn to_overflow(&self, bids: &[Bid], own: usize, own_outcome: u8) -> Karma {
        if own_outcome == WIN {
            bids[own]
        } else {
            0
        }
    }
}

impl PaymentRule for PayBidToSociety {
    fn name(&self) -> &'static str {
        "pay_to_society"
    }

    fn payments(&self, karma: &[Karma], bids: &[Bid], outcome: &[u8]) -> Result<Payments> {
        let mut deltas = vec![0i64; bids.len()];
        let mut to_overflow = 0;
        for (j, o) in outcome.iter().enumerate() {
            if *o == WIN {
                if bids[j] > karma[j] {
                    return Err(Error::Contract(format!(
                        "bid {} exceeds balance {}",
                        bids[j], karma[j]
                    )));
                }
                deltas[j] = -i64::from(bids[j]);
                to_overflow += i64::from(bids[j]);
            }
        }
        Ok(Payments {
            deltas,
            to_overflow,
        })
    }
}

/// Urgency is redrawn from fixed weights, independent of the current level
/// and of the outcome.
#[derive(Debug, Clone)]
pub struct IidUrgency {
    weights: Vec<f64>,
}

impl IidUrgency {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        super::check_normalized("urgency weights", &weights)?;
        Ok(Self { weights })
    }

    /// Geometric law `p (1 - p)^i` over `levels` levels, renormalized after
    /// truncation.
    pub fn geometric(p: f64, levels: usize) -> Result<Self> {
        Self::new(truncated_geometric(p, levels)?)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn truncated_geometric(p: f64, levels: usize) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) || levels == 0 {
        return Err(Error::Range(format!(
            "geometric law needs p in (0, 1] and at least one level (p = {p}, levels = {levels})"
        )));
    }
    let raw: Vec<f64> = (0..levels).map(|i| p * (1.0 - p).powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

impl UrgencyTransitionModel for IidUrgency {
    fn name(&self) -> &'static str {
        "iid"
    }

    fn num_levels(&self) -> usize {
        self.weights.len()
    }

    fn prob(&self, _ty: usize, next: usize, _now: usize, _own_outcome: u8) -> f64 {
        self.weights[next]
    }
}

/// Splits the pot evenly; the remainder goes one unit each to distinct agents
/// chosen uniformly at random.
#[derive(Debug, Clone, Default)]
pub struct UniformOverflow;

impl OverflowRule for UniformOverflow {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn distribute(&self, karma: &[Karma], pot: u64, rng: &mut dyn RngCore) -> Vec<u64> {
        let n = karma.len();
        if n == 0 || pot == 0 {
            return vec![0; n];
        }
        let base = pot / n as u64;
        let remainder = (pot % n as u64) as usize;
        let mut credits = vec![base; n];
        for i in index::sample(rng, n, remainder) {
            credits[i] += 1;
        }
        credits
    }

    fn redistributes(&self) -> bool {
        true
    }
}

/// Leaves the pot untouched.
#[derive(Debug, Clone, Default)]
pub struct NoOverflow;

impl OverflowRule for NoOverflow {
    fn name(&self) -> &'static str {
        "none"
    }

    fn distribute(&self, karma: &[Karma], _pot: u64, _rng: &mut dyn RngCore) -> Vec<u64> {
        vec![0; karma.len()]
    }

    fn redistributes(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default)]
pub struct NoRedistribution;

impl RedistributionRule for NoRedistribution {
    fn name(&self) -> &'static str {
        "none"
    }

    fn redistribute(&self, karma: &[Karma], _rng: &mut dyn RngCore) -> Vec<i64> {
        vec![0; karma.len()]
    }
}
