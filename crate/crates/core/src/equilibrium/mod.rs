//! Stationary Nash equilibrium of a Karma game via perturbed best-response
//! dynamics.
//!
//! Each iteration grows the Karma/action axes when the boundary carries mass,
//! re-normalizes the social state, recomputes the intermediate products
//! (ν, γ, κ, ξ, ρ, R, P, V, Q, π̃) and takes a damped step towards the
//! perturbed best response.

mod export;
mod products;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_initial_distribution, build_initial_policy, DistributionInit, GameSpec, Karma,
    PolicyInit, SocialState,
};

pub use export::{read_state, write_convergence_log, write_state, NamedArray, StateFile};
pub use products::{
    bellman_backup, compute_gamma, compute_kappa, compute_nu, compute_q, compute_reward,
    compute_rho, compute_transition, compute_value, compute_workspace, compute_xi,
    perturbed_best_response, update_social_state, Rho, ValueSolution, Workspace,
};

/// Hyper-parameters of the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Softmax greediness λ.
    pub lambda: f64,
    /// Distribution step ϖ.
    pub omega: f64,
    /// Policy step relative to the distribution step, η.
    pub eta: f64,
    pub max_iterations: usize,
    /// Sup-norm of the social-state change that counts as converged.
    pub convergence_tol: f64,
    pub v_max_iterations: usize,
    pub v_tol: f64,
    /// Start each value iteration from the previous iteration's V instead of
    /// zero. Same fixed point, fewer sweeps.
    pub warm_start_value: bool,
    pub expand_action_tol: f64,
    pub expand_state_tol: f64,
    /// Initial largest bid; `None` means the average initial Karma.
    pub initial_action_span: Option<Karma>,
    /// Initial largest balance; `None` means four times the average initial Karma.
    pub initial_state_span: Option<Karma>,
    pub karma_growth_step: usize,
    /// Hard caps on the axes.
    pub max_karma_cap: Karma,
    pub max_action_cap: Karma,
    pub initial_policy: PolicyInit,
    /// Adaptive step: iteration i uses ϖ / (1 + step_decay·i). Zero keeps
    /// the step constant.
    pub step_decay: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            omega: 0.20,
            eta: 0.50,
            max_iterations: 1000,
            convergence_tol: 1e-7,
            v_max_iterations: 10_000,
            v_tol: 1e-10,
            warm_start_value: false,
            expand_action_tol: 1e-4,
            expand_state_tol: 1e-4,
            initial_action_span: None,
            initial_state_span: None,
            karma_growth_step: 4,
            max_karma_cap: 1000,
            max_action_cap: 500,
            initial_policy: PolicyInit::Even,
            step_decay: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_owned()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(self.convergence_tol > 0.0 && self.v_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.step_decay >= 0.0) {
            return bad("step_decay must be non-negative");
        }
        if self.karma_growth_step == 0 {
            return bad("karma_growth_step must be positive");
        }
        Ok(())
    }
}

/// Mean-Karma correction stops once the mean is this close to the target.
const MEAN_TOL: f64 = 1e-12;

/// Rescales d to unit mass, tilts it so the mean Karma equals `avg_karma`,
/// and renormalizes every policy row. Idempotent on valid states.
pub fn validate_and_normalize(state: &SocialState, avg_karma: f64) -> Result<SocialState> {
    if state.distribution.iter().any(|v| *v < 0.0 || !v.is_finite())
        || state.policy.iter().any(|v| *v < 0.0 || !v.is_finite())
    {
        return Err(Error::Validation(
            "social state holds negative or non-finite entries".into(),
        ));
    }
    let mut d = state.distribution.clone();
    let mass = d.sum();
    if mass <= 0.0 {
        return Err(Error::Validation("distribution has zero mass".into()));
    }
    if (avg_karma - (state.karma_len() - 1) as f64) > 0.0 {
        return Err(Error::Range(format!(
            "target mean {avg_karma} exceeds the Karma axis"
        )));
    }
    d /= mass;

    for _ in 0..50 {
        let mean: f64 = d.indexed_iter().map(|((_, _, k), v)| k as f64 * v).sum();
        let gap = avg_karma - mean;
        if gap.abs() <= MEAN_TOL {
            break;
        }
        let var: f64 = d
            .indexed_iter()
            .map(|((_, _, k), v)| (k as f64 - mean).powi(2) * v)
            .sum();
        if var <= 0.0 {
            return Err(Error::Validation(format!(
                "cannot move a point-mass distribution from mean {mean} to {avg_karma}"
            )));
        }
        // d_k (1 + β (k − mean)) keeps the mass and moves the mean by β·var.
        let beta = gap / var;
        for ((_, _, k), v) in d.indexed_iter_mut() {
            *v = (*v * (1.0 + beta * (k as f64 - mean))).max(0.0);
        }
        let mass = d.sum();
        d /= mass;
    }

    let mut policy = state.policy.clone();
    for mut row in policy.lanes_mut(ndarray::Axis(3)) {
        let total = row.sum();
        if total <= 0.0 {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            row /= total;
        }
    }
    Ok(SocialState {
        policy,
        distribution: d,
    })
}

/// Which axes grew during an adjustment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Expansion {
    pub karma: bool,
    pub action: bool,
}

impl Expansion {
    pub fn any(self) -> bool {
        self.karma || self.action
    }
}

/// Grows the action axis by one when the boundary bid carries policy mass,
/// and the Karma axis by `karma_growth_step` when the top four balances carry
/// distribution mass.
pub fn adjust_state_space(
    state: &SocialState,
    config: &SolverConfig,
) -> Result<(SocialState, Expansion)> {
    let top_action = state.action_len() - 1;
    let boundary_policy = state.policy.slice(s![.., .., .., top_action]).sum();
    let nk = state.karma_len();
    let tail = nk.saturating_sub(4);
    let boundary_mass = state.distribution.slice(s![.., .., tail..]).sum();

    let expansion = Expansion {
        action: boundary_policy > config.expand_action_tol,
        karma: boundary_mass > config.expand_state_tol,
    };
    if !expansion.any() {
        return Ok((state.clone(), expansion));
    }
    let karma_len = if expansion.karma {
        nk + config.karma_growth_step
    } else {
        nk
    };
    let action_len = if expansion.action {
        state.action_len() + 1
    } else {
        state.action_len()
    };
    if karma_len > config.max_karma_cap as usize + 1 {
        return Err(Error::Resource(format!(
            "Karma axis would exceed the cap of {}",
            config.max_karma_cap
        )));
    }
    if action_len > config.max_action_cap as usize + 1 {
        return Err(Error::Resource(format!(
            "action axis would exceed the cap of {}",
            config.max_action_cap
        )));
    }
    Ok((state.grown(karma_len, action_len), expansion))
}

/// Per-iteration log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub residual: f64,
    pub karma_len: usize,
    pub action_len: usize,
    pub mean_karma: f64,
    pub value_sweeps: usize,
}

/// How well π agrees with the best response implied by Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Smallest π-mass on the Q-argmax over populated states.
    pub min_argmax_mass: f64,
    /// Populated states whose π-argmax differs from the Q-argmax.
    pub argmax_disagreements: usize,
    pub populated_states: usize,
}

/// Equilibrium certificate over states with `d > populated`.
pub fn certificate(state: &SocialState, ws: &Workspace, populated: f64) -> Certificate {
    let (nt, nu, nk, na) = state.policy.dim();
    let mut min_mass = 1.0f64;
    let mut disagreements = 0;
    let mut count = 0;
    for t in 0..nt {
        for u in 0..nu {
            for k in 0..nk {
                if state.distribution[[t, u, k]] <= populated {
                    continue;
                }
                count += 1;
                let argmax = |f: &dyn Fn(usize) -> f64| {
                    (0..na).fold(0, |best, a| if f(a) > f(best) { a } else { best })
                };
                let q_best = argmax(&|a| ws.q[[t, u, k, a]]);
                let pi_best = argmax(&|a| state.policy[[t, u, k, a]]);
                min_mass = min_mass.min(state.policy[[t, u, k, q_best]]);
                if q_best != pi_best {
                    disagreements += 1;
                }
            }
        }
    }
    Certificate {
        min_argmax_mass: min_mass,
        argmax_disagreements: disagreements,
        populated_states: count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
    pub karma_len: usize,
    pub action_len: usize,
    pub value_residual: f64,
    pub certificate: Certificate,
}

impl ConvergenceReport {
    pub fn final_residual(&self) -> f64 {
        self.log.last().map_or(f64::INFINITY, |l| l.residual)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: SocialState,
    /// Products computed at the returned state.
    pub workspace: Workspace,
    pub report: ConvergenceReport,
}

/// Default starting point: Karma axis `0..=initial_state_span`, action axis
/// `0..=initial_action_span`, everyone at the average balance, urgency at the
/// stationary law of the urgency model.
pub fn initial_state(spec: &GameSpec, config: &SolverConfig) -> Result<SocialState> {
    let avg = spec.initial_avg_karma;
    let max_karma = config.initial_state_span.unwrap_or(4 * avg).max(avg + 1);
    let max_action = config.initial_action_span.unwrap_or(avg).max(1);
    let urgency = stationary_urgency(spec)?;
    let d = build_initial_distribution(
        &spec.type_shares(),
        &urgency,
        avg,
        DistributionInit::AllAtAverage,
        max_karma,
    )?;
    let pi = build_initial_policy(
        config.initial_policy,
        spec.num_types(),
        spec.num_urgencies(),
        max_karma as usize + 1,
        max_action as usize + 1,
    )?;
    SocialState::new(pi, d)
}

/// Stationary urgency law of type 0, by power iteration on Ψ with the
/// outcome averaged out evenly.
fn stationary_urgency(spec: &GameSpec) -> Result<Vec<f64>> {
    let n = spec.num_urgencies();
    let model = spec.urgency_model.as_ref();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (now, pn) in p.iter().enumerate() {
            for (un, slot) in next.iter_mut().enumerate() {
                let step = 0.5 * (model.prob(0, un, now, 0) + model.prob(0, un, now, 1));
                *slot += pn * step;
            }
        }
        let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if change < 1e-15 {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    Ok(p.into_iter().map(|v| v / total).collect())
}

fn state_change(a: &SocialState, b: &SocialState) -> f64 {
    let dp = a
        .policy
        .iter()
        .zip(b.policy.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let dd = a
        .distribution
        .iter()
        .zip(b.distribution.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    dp.max(dd)
}

const DIVERGENCE_WINDOW: usize = 50;
/// States with less mass than this are ignored by the certificate.
pub const POPULATED: f64 = 1e-6;

/// Runs the best-response dynamics from `initial` until the social state
/// stops moving or `max_iterations` is reached. Hitting the iteration limit is
/// reported through `report.converged`, not as an error.
pub fn solve(spec: &GameSpec, config: &SolverConfig, initial: SocialState) -> Result<Solution> {
    spec.validate()?;
    config.validate()?;
    let avg = f64::from(spec.initial_avg_karma);
    let mut state = validate_and_normalize(&initial, avg)?;
    let mut log: Vec<IterationLog> = Vec::new();
    let mut last_growth = 0usize;
    let mut value_start: Option<Array3<f64>> = None;
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let (grown, expansion) = adjust_state_space(&state, config)?;
        if expansion.any() {
            last_growth = iteration;
            value_start = None;
        }
        let current = validate_and_normalize(&grown, avg)?;
        let ws = compute_workspace(
            spec,
            &current,
            config.lambda,
            config.v_tol,
            config.v_max_iterations,
            value_start.as_ref(),
        )?;
        let next = update_social_state(
            &current,
            &ws.perturbed_policy,
            &ws.transition,
            config.omega / (1.0 + config.step_decay * iteration as f64),
            config.eta,
        );
        let next = validate_and_normalize(&next, avg)?;
        let residual = state_change(&next, &current);
        log.push(IterationLog {
            iteration,
            residual,
            karma_len: next.karma_len(),
            action_len: next.action_len(),
            mean_karma: next.mean_karma(),
            value_sweeps: ws.value_sweeps,
        });
        if config.warm_start_value {
            value_start = Some(ws.value);
        }
        state = next;

        if !residual.is_finite() {
            return Err(Error::Diverged {
                iteration,
                residual,
            });
        }
        if iteration > last_growth + DIVERGENCE_WINDOW {
            let before = log[iteration - 1 - DIVERGENCE_WINDOW].residual;
            if residual > 10.0 * before && residual > config.convergence_tol {
                return Err(Error::Diverged {
                    iteration,
                    residual,
                });
            }
        }
        if residual < config.convergence_tol && !expansion.any() {
            converged = true;
            break;
        }
    }

    let workspace = compute_workspace(
        spec,
        &state,
        config.lambda,
        config.v_tol,
        config.v_max_iterations,
        value_start.as_ref(),
    )?;
    let report = ConvergenceReport {
        converged,
        iterations: log.len(),
        karma_len: state.karma_len(),
        action_len: state.action_len(),
        value_residual: workspace.value_residual,
        certificate: certificate(&state, &workspace, POPULATED),
        log,
    };
    Ok(Solution {
        state,
        workspace,
        report,
    })
}
