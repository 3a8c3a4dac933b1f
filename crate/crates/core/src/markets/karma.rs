//! Tunnel access priced by a Karma threshold auction.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::money::route_urgency_means;
use crate::equilibrium::{initial_state, solve, SolverConfig};
use crate::error::{Error, Result};
use crate::model::templates::{
    IidUrgency, NoRedistribution, PayBidToSociety, ThresholdAuction, UniformOverflow,
};
use crate::model::{AgentType, Bid, GameSpec, Karma, LOSE, NUM_OUTCOMES, WIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KarmaPricingConfig {
    pub avg_karma: Karma,
    /// Discount factor of the single driver type.
    pub discount: f64,
    pub num_agents: usize,
    pub solver: SolverConfig,
}

impl Default for KarmaPricingConfig {
    fn default() -> Self {
        Self {
            avg_karma: 10,
            discount: 0.9,
            num_agents: 10_000,
            solver: SolverConfig {
                lambda: 500.0,
                max_iterations: 5000,
                warm_start_value: true,
                ..SolverConfig::default()
            },
        }
    }
}

/// Pairwise threshold auction, winner pays its bid to the overflow account,
/// which is shared out uniformly. Losing costs `level × time_saving_hours`.
pub fn karma_game(
    urgency_weights: &[f64],
    threshold: Bid,
    time_saving_hours: f64,
    config: &KarmaPricingConfig,
) -> Result<GameSpec> {
    if !(time_saving_hours.is_finite() && time_saving_hours >= 0.0) {
        return Err(Error::Range(format!(
            "time saving must be finite and >= 0, got {time_saving_hours}"
        )));
    }
    let levels = urgency_weights.len();
    let mut cost = Array2::zeros((levels, NUM_OUTCOMES));
    for l in 0..levels {
        cost[[l, LOSE as usize]] = (l + 1) as f64 * time_saving_hours;
    }
    let spec = GameSpec {
        num_agents: config.num_agents,
        participants: 2,
        types: vec![AgentType {
            name: "driver".into(),
            discount: config.discount,
            share: 1.0,
        }],
        urgencies: (1..=levels).map(|l| l as f64).collect(),
        initial_avg_karma: config.avg_karma,
        cost,
        outcome_model: Arc::new(ThresholdAuction::new(threshold, 2)),
        karma_model: Arc::new(PayBidToSociety),
        urgency_model: Arc::new(IidUrgency::new(urgency_weights.to_vec())?),
        payment_rule: Arc::new(PayBidToSociety),
        overflow: Arc::new(UniformOverflow),
        redistribution: Arc::new(NoRedistribution),
    };
    spec.validate()?;
    Ok(spec)
}

/// Stationary outcome of the Karma game at one threshold.
#[derive(Debug, Clone, Serialize)]
pub struct KarmaPoint {
    pub threshold: Bid,
    /// Probability that a driver wins the tunnel in an interaction.
    pub share: f64,
    pub share_by_urgency: Vec<f64>,
    pub avg_urgency_tunnel: f64,
    pub avg_urgency_bridge: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub karma_len: usize,
    pub action_len: usize,
}

pub fn karma_threshold_equilibrium(
    urgency_weights: &[f64],
    threshold: Bid,
    time_saving_hours: f64,
    config: &KarmaPricingConfig,
) -> Result<KarmaPoint> {
    let spec = karma_game(urgency_weights, threshold, time_saving_hours, config)?;
    let sol = solve(&spec, &config.solver, initial_state(&spec, &config.solver)?)?;
    let (state, ws) = (&sol.state, &sol.workspace);
    let levels = urgency_weights.len();
    let mut win = vec![0.0; levels];
    let mut mass = vec![0.0; levels];
    for ((t, u, k), d) in state.distribution.indexed_iter() {
        let p_win: f64 = (0..state.action_len())
            .map(|a| state.policy[[t, u, k, a]] * ws.gamma[[WIN as usize, a]])
            .sum();
        win[u] += d * p_win;
        mass[u] += d;
    }
    let share = win.iter().sum();
    let share_by_urgency: Vec<f64> = win
        .iter()
        .zip(&mass)
        .map(|(w, m)| if *m > 0.0 { w / m } else { 0.0 })
        .collect();
    let (avg_urgency_tunnel, avg_urgency_bridge) = route_urgency_means(&share_by_urgency, &mass);
    Ok(KarmaPoint {
        threshold,
        share,
        share_by_urgency,
        avg_urgency_tunnel,
        avg_urgency_bridge,
        converged: sol.report.converged,
        iterations: sol.report.iterations,
        final_residual: sol.report.final_residual(),
        karma_len: state.karma_len(),
        action_len: state.action_len(),
    })
}

/// Solves every threshold, spreading the points over `threads` workers.
/// Results come back in threshold order.
pub fn karma_threshold_sweep(
    urgency_weights: &[f64],
    thresholds: &[Bid],
    time_saving_hours: f64,
    config: &KarmaPricingConfig,
    threads: usize,
) -> Result<Vec<KarmaPoint>> {
    let threads = threads.clamp(1, thresholds.len().max(1));
    let mut slots: Vec<Option<Result<KarmaPoint>>> = thresholds.iter().map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = thresholds.len().div_ceil(threads).max(1);
        for (ths, out) in thresholds.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (th, slot) in ths.iter().zip(out.iter_mut()) {
                    *slot = Some(karma_threshold_equilibrium(
                        urgency_weights,
                        *th,
                        time_saving_hours,
                        config,
                    ));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect()
}

/// Fractional threshold at which the share curve crosses a target, by
/// linear interpolation between the bracketing integer thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct KarmaCrossing {
    pub target_share: f64,
    pub lower: Bid,
    pub upper: Bid,
    pub threshold: f64,
    pub share_by_urgency: Vec<f64>,
    pub avg_urgency_tunnel: f64,
    pub avg_urgency_bridge: f64,
}

pub fn interpolate_crossing(
    points: &[KarmaPoint],
    target_share: f64,
    urgency_weights: &[f64],
) -> Option<KarmaCrossing> {
    let mut sorted: Vec<&KarmaPoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.threshold);
    sorted.windows(2).find_map(|pair| {
        let (a, b) = (pair[0], pair[1]);
        if !(a.share >= target_share && b.share <= target_share) {
            return None;
        }
        let frac = if a.share > b.share {
            (a.share - target_share) / (a.share - b.share)
        } else {
            0.0
        };
        let share_by_urgency: Vec<f64> = a
            .share_by_urgency
            .iter()
            .zip(&b.share_by_urgency)
            .map(|(x, y)| x + frac * (y - x))
            .collect();
        let (avg_urgency_tunnel, avg_urgency_bridge) =
            route_urgency_means(&share_by_urgency, urgency_weights);
        Some(KarmaCrossing {
            target_share,
            lower: a.threshold,
            upper: b.threshold,
            threshold: f64::from(a.threshold) + frac * f64::from(b.threshold - a.threshold),
            share_by_urgency,
            avg_urgency_tunnel,
            avg_urgency_bridge,
        })
    })
}
