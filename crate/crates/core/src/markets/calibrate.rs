//! Fitting the corridor's link-performance curves to published anchors.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use super::corridor::CorridorModel;
use crate::error::{Error, Result};

/// Observed equilibrium figures the calibrated model must reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchors {
    /// Tunnel flow at the user equilibrium (veh/h).
    pub wardrop_tunnel_flow: f64,
    /// Average travel time at the user equilibrium (minutes).
    pub wardrop_minutes: f64,
    /// Tunnel flow at the system optimum (veh/h).
    pub optimum_tunnel_flow: f64,
    /// Total vehicle-hours at the system optimum.
    pub optimum_vehicle_hours: f64,
}

impl Default for Anchors {
    fn default() -> Self {
        Self {
            wardrop_tunnel_flow: 6169.0,
            wardrop_minutes: 45.01,
            optimum_tunnel_flow: 3983.0,
            optimum_vehicle_hours: 6791.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorResidual {
    pub name: &'static str,
    pub target: f64,
    pub model: f64,
    /// (model − target) / target
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub model: CorridorModel,
    pub residuals: Vec<AnchorResidual>,
    pub evaluations: u64,
}

impl Calibration {
    pub fn worst(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.relative.abs())
            .fold(0.0, f64::max)
    }
}

pub fn anchor_residuals(model: &CorridorModel, anchors: &Anchors) -> Vec<AnchorResidual> {
    let w = model.wardrop_split();
    let o = model.system_optimum();
    [
        ("wardrop_tunnel_flow", anchors.wardrop_tunnel_flow, w.tunnel_flow),
        ("wardrop_minutes", anchors.wardrop_minutes, w.average_minutes()),
        ("optimum_tunnel_flow", anchors.optimum_tunnel_flow, o.tunnel_flow),
        ("optimum_vehicle_hours", anchors.optimum_vehicle_hours, o.total_vehicle_hours),
    ]
    .into_iter()
    .map(|(name, target, model)| AnchorResidual {
        name,
        target,
        model,
        relative: (model - target) / target,
    })
    .collect()
}

/// Free parameters: tunnel onset, ln tunnel capacity, tunnel β, ln bridge
/// capacity, bridge β. α, free-flow times and distances stay fixed.
fn with_params(base: &CorridorModel, p: &[f64]) -> CorridorModel {
    let mut m = base.clone();
    m.tunnel.onset = p[0];
    m.tunnel.capacity = p[1].exp();
    m.tunnel.bpr_beta = p[2];
    m.bridge.onset = 0.0;
    m.bridge.capacity = p[3].exp();
    m.bridge.bpr_beta = p[4];
    m
}

fn params_of(m: &CorridorModel) -> Vec<f64> {
    vec![
        m.tunnel.onset,
        m.tunnel.capacity.ln(),
        m.tunnel.bpr_beta,
        m.bridge.capacity.ln(),
        m.bridge.bpr_beta,
    ]
}

struct Misfit<'a> {
    base: &'a CorridorModel,
    anchors: &'a Anchors,
}

impl CostFunction for Misfit<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let feasible = p[0] >= 0.0
            && p[0] < self.base.total_demand
            && p[2] > 0.0
            && p[4] > 0.0
            && p.iter().all(|v| v.is_finite());
        if !feasible {
            return Ok(f64::INFINITY);
        }
        let r = anchor_residuals(&with_params(self.base, p), self.anchors);
        let worst = r.iter().map(|x| x.relative.abs()).fold(0.0, f64::max);
        let sum: f64 = r.iter().map(|x| x.relative.abs()).sum();
        Ok(worst + 0.01 * sum)
    }
}

/// Minimax fit of the free curve parameters, starting from `start`, with a
/// few Nelder–Mead restarts around the incumbent. Fails when any anchor is
/// missed by more than `tolerance` (relative).
pub fn calibrate_corridor(
    start: &CorridorModel,
    anchors: &Anchors,
    tolerance: f64,
) -> Result<Calibration> {
    start.validate()?;
    let problem = |base| Misfit { base, anchors };
    let mut best = params_of(start);
    let mut evaluations = 0;
    for round in 0..4 {
        let scale = 0.2 / (1.0 + round as f64);
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut v = best.clone();
            let step = if v[i].abs() > 1e-9 { v[i] * scale } else { scale };
            v[i] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| Error::Config(e.to_string()))?;
        let res = Executor::new(problem(start), solver)
            .configure(|s| s.max_iters(4000))
            .run()
            .map_err(|e| Error::Config(format!("calibration search failed: {e}")))?;
        evaluations += res.state.get_func_counts().get("cost_count").copied().unwrap_or(0);
        if let Some(p) = res.state.best_param {
            best = p;
        }
    }
    let model = with_params(start, &best);
    let residuals = anchor_residuals(&model, anchors);
    let calibration = Calibration {
        model,
        residuals,
        evaluations,
    };
    let worst = calibration.worst();
    if worst > tolerance {
        let detail = calibration
            .residuals
            .iter()
            .map(|r| format!("{} {:.4} vs {:.4} ({:+.3}%)", r.name, r.model, r.target, 100.0 * r.relative))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Calibration {
            worst,
            tolerance,
            detail,
        });
    }
    Ok(calibration)
}

/// A deliberately rough starting point for [`calibrate_corridor`].
pub fn uncalibrated() -> CorridorModel {
    let mut m = CorridorModel::default();
    m.tunnel.onset = 3000.0;
    m.tunnel.capacity = 1500.0;
    m.tunnel.bpr_beta = 1.0;
    m.bridge.capacity = 100_000.0;
    m.bridge.bpr_beta = 0.1;
    m
}
