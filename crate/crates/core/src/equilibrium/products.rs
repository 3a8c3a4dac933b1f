//! Intermediate products of one best-response iteration.
//!
//! Index conventions: `t` type, `u` urgency, `k` Karma, `a` own action,
//! `o` own outcome; a trailing `n` (e.g. `kn`, `un`) marks the successor
//! state after the interaction.

use ndarray::{Array1, Array2, Array3, Array4, Array5, Array6};

use crate::error::{Error, Result};
use crate::model::{
    Bid, GameSpec, Karma, KarmaTransitionModel, OutcomeModel, SocialState,
    UrgencyTransitionModel, NUM_OUTCOMES,
};

const STATE_TOL: f64 = 1e-6;

/// ν[a] = Σ d[τ,u,k] π[τ,u,k,a].
pub fn compute_nu(state: &SocialState) -> Result<Array1<f64>> {
    let mass = state.total_mass();
    if (mass - 1.0).abs() > STATE_TOL {
        return Err(Error::Validation(format!(
            "distribution mass is {mass}, expected 1"
        )));
    }
    let row_err = state.policy_row_error();
    if row_err > STATE_TOL {
        return Err(Error::Validation(format!(
            "policy rows deviate from 1 by up to {row_err}"
        )));
    }
    let (nt, nu, nk, na) = state.policy.dim();
    let mut out = Array1::zeros(na);
    for t in 0..nt {
        for u in 0..nu {
            for k in 0..nk {
                let d = state.distribution[[t, u, k]];
                if d == 0.0 {
                    continue;
                }
                for a in 0..na {
                    out[a] += d * state.policy[[t, u, k, a]];
                }
            }
        }
    }
    Ok(out)
}

/// Walks every tuple of `peers` i.i.d. peer bids drawn from `nu`, with its
/// joint probability.
fn for_each_peer_tuple(nu: &Array1<f64>, peers: usize, mut f: impl FnMut(&[Bid], f64)) {
    let support: Vec<usize> = (0..nu.len()).filter(|a| nu[*a] > 0.0).collect();
    if support.is_empty() {
        return;
    }
    let mut idx = vec![0usize; peers];
    let mut bids = vec![0 as Bid; peers];
    loop {
        let mut p = 1.0;
        for (slot, i) in idx.iter().enumerate() {
            let a = support[*i];
            bids[slot] = a as Bid;
            p *= nu[a];
        }
        f(&bids, p);
        let mut pos = 0;
        loop {
            if pos == peers {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < support.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// γ[o,a] = Σ_{a'} ν[a'] Θ[o | a, a'], with |𝒥|−1 independent peers.
pub fn compute_gamma(
    nu: &Array1<f64>,
    outcome: &dyn OutcomeModel,
    participants: usize,
) -> Result<Array2<f64>> {
    let na = nu.len();
    let mut gamma = Array2::zeros((NUM_OUTCOMES, na));
    let mut bids = vec![0 as Bid; participants];
    let mut failure = None;
    for a in 0..na {
        bids[0] = a as Bid;
        for_each_peer_tuple(nu, participants - 1, |peers, p| {
            bids[1..].copy_from_slice(peers);
            match outcome.distribution(&bids) {
                Ok(dist) => {
                    for (joint, q) in dist {
                        gamma[[joint[0] as usize, a]] += p * q;
                    }
                }
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure.take() {
            return Err(e);
        }
    }
    Ok(gamma)
}

/// κ[k*,k,a]: Karma after one interaction, marginalized over the peers' bids
/// and the outcome. When `redistribute_overflow` is set, the expected
/// per-participant overflow payment `m` flows back to every participant as
/// `⌊m⌋` or `⌈m⌉` units (mean `m`), mirroring the uniform overflow rule.
/// Successor balances above the axis are clamped onto the top balance.
/// Infeasible actions (a > k) keep the balance unchanged.
pub fn compute_kappa(
    nu: &Array1<f64>,
    outcome: &dyn OutcomeModel,
    karma_model: &dyn KarmaTransitionModel,
    participants: usize,
    karma_len: usize,
    redistribute_overflow: bool,
) -> Result<Array3<f64>> {
    let na = nu.len();
    let top = karma_len - 1;
    let mut kappa = Array3::zeros((karma_len, karma_len, na));
    let mut bids = vec![0 as Bid; participants];
    let mut overflow_per_participant = 0.0;
    let mut failure: Option<Error> = None;

    for a in 0..na {
        bids[0] = a as Bid;
        for_each_peer_tuple(nu, participants - 1, |peers, p| {
            if failure.is_some() {
                return;
            }
            bids[1..].copy_from_slice(peers);
            let dist = match outcome.distribution(&bids) {
                Ok(d) => d,
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            };
            for (joint, q) in dist {
                let w = p * q;
                if w == 0.0 {
                    continue;
                }
                let paid: Karma = (0..participants)
                    .map(|j| karma_model.to_overflow(&bids, j, joint[j]))
                    .sum();
                overflow_per_participant += nu[a] * w * f64::from(paid) / participants as f64;
                for k in a..karma_len {
                    match karma_model.next_karma(k as Karma, &bids, 0, joint[0]) {
                        Ok(next) => {
                            for (kn, r) in next {
                                kappa[[(kn as usize).min(top), k, a]] += w * r;
                            }
                        }
                        Err(e) => {
                            failure = Some(e);
                            return;
                        }
                    }
                }
            }
        });
        if let Some(e) = failure.take() {
            return Err(e);
        }
        for k in 0..a.min(karma_len) {
            kappa[[k, k, a]] = 1.0;
        }
    }

    if redistribute_overflow && overflow_per_participant > 0.0 {
        let base = overflow_per_participant.floor() as usize;
        let frac = overflow_per_participant - base as f64;
        let mut shifted = Array3::zeros(kappa.raw_dim());
        for a in 0..na {
            for k in a..karma_len {
                for kn in 0..karma_len {
                    let v = kappa[[kn, k, a]];
                    if v == 0.0 {
                        continue;
                    }
                    shifted[[(kn + base).min(top), k, a]] += v * (1.0 - frac);
                    if frac > 0.0 {
                        shifted[[(kn + base + 1).min(top), k, a]] += v * frac;
                    }
                }
            }
            for k in 0..a.min(karma_len) {
                shifted[[k, k, a]] = 1.0;
            }
        }
        kappa = shifted;
    }
    Ok(kappa)
}

/// ξ[u,a] = −Σ_o C[u,o] γ[o,a]: immediate reward (negative cost).
pub fn compute_xi(gamma: &Array2<f64>, cost: &Array2<f64>) -> Array2<f64> {
    let (nu, no) = cost.dim();
    let na = gamma.dim().1;
    Array2::from_shape_fn((nu, na), |(u, a)| {
        -(0..no).map(|o| cost[[u, o]] * gamma[[o, a]]).sum::<f64>()
    })
}

/// ρ[τ,u*,k*,u,k,a] = Σ_o Ψ[τ,u*,u,o] γ[o,a] κ[k*,k,a], held in factored form.
#[derive(Debug, Clone)]
pub struct Rho {
    /// Ψ[τ,u*,u,o]
    pub psi: Array4<f64>,
    pub gamma: Array2<f64>,
    pub kappa: Array3<f64>,
}

impl Rho {
    pub fn get(&self, t: usize, un: usize, kn: usize, u: usize, k: usize, a: usize) -> f64 {
        (0..self.gamma.dim().0)
            .map(|o| self.psi[[t, un, u, o]] * self.gamma[[o, a]] * self.kappa[[kn, k, a]])
            .sum()
    }

    /// Full six-index tensor; only sensible for small games.
    pub fn materialize(&self) -> Array6<f64> {
        let (nt, nun, _, _) = self.psi.dim();
        let (nk, _, na) = self.kappa.dim();
        Array6::from_shape_fn((nt, nun, nk, nun, nk, na), |(t, un, kn, u, k, a)| {
            self.get(t, un, kn, u, k, a)
        })
    }
}

pub fn compute_rho(
    gamma: &Array2<f64>,
    kappa: &Array3<f64>,
    urgency: &dyn UrgencyTransitionModel,
    num_types: usize,
) -> Rho {
    let levels = urgency.num_levels();
    let no = gamma.dim().0;
    let psi = Array4::from_shape_fn((num_types, levels, levels, no), |(t, un, u, o)| {
        urgency.prob(t, un, u, o as u8)
    });
    Rho {
        psi,
        gamma: gamma.clone(),
        kappa: kappa.clone(),
    }
}

/// R[τ,u,k] = Σ_a π[τ,u,k,a] ξ[u,a].
pub fn compute_reward(policy: &Array4<f64>, xi: &Array2<f64>) -> Array3<f64> {
    let (nt, nu, nk, na) = policy.dim();
    Array3::from_shape_fn((nt, nu, nk), |(t, u, k)| {
        (0..na)
            .filter(|a| policy[[t, u, k, *a]] != 0.0)
            .map(|a| policy[[t, u, k, a]] * xi[[u, a]])
            .sum()
    })
}

/// P[τ,u*,k*,u,k] = Σ_a π[τ,u,k,a] ρ[τ,u*,k*,u,k,a].
pub fn compute_transition(policy: &Array4<f64>, rho: &Rho) -> Array5<f64> {
    let (nt, nu, nk, na) = policy.dim();
    let no = rho.gamma.dim().0;
    let mut p = Array5::zeros((nt, nu, nk, nu, nk));
    let mut mixed = Array2::<f64>::zeros((no, nk));
    for t in 0..nt {
        for u in 0..nu {
            for k in 0..nk {
                // mixed[o,k*] = Σ_a π γ[o,a] κ[k*,k,a]
                mixed.fill(0.0);
                for a in 0..na.min(k + 1) {
                    let pa = policy[[t, u, k, a]];
                    if pa == 0.0 {
                        continue;
                    }
                    for o in 0..no {
                        let w = pa * rho.gamma[[o, a]];
                        if w == 0.0 {
                            continue;
                        }
                        for kn in 0..nk {
                            mixed[[o, kn]] += w * rho.kappa[[kn, k, a]];
                        }
                    }
                }
                for un in 0..nu {
                    for o in 0..no {
                        let psi = rho.psi[[t, un, u, o]];
                        if psi == 0.0 {
                            continue;
                        }
                        for kn in 0..nk {
                            p[[t, un, kn, u, k]] += psi * mixed[[o, kn]];
                        }
                    }
                }
            }
        }
    }
    p
}

/// Outcome of the value iteration.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub value: Array3<f64>,
    /// ‖V − (R + T P V)‖_∞ at return.
    pub residual: f64,
    pub sweeps: usize,
}

/// One Bellman backup R + T P V.
pub fn bellman_backup(
    reward: &Array3<f64>,
    transition: &Array5<f64>,
    discounts: &[f64],
    value: &Array3<f64>,
) -> Array3<f64> {
    let (nt, nu, nk) = reward.dim();
    let mut out = Array3::zeros((nt, nu, nk));
    for t in 0..nt {
        let mut acc = Array2::<f64>::zeros((nu, nk));
        for un in 0..nu {
            for kn in 0..nk {
                let v = value[[t, un, kn]];
                if v == 0.0 {
                    continue;
                }
                let slab = transition.slice(ndarray::s![t, un, kn, .., ..]);
                acc.scaled_add(v, &slab);
            }
        }
        for u in 0..nu {
            for k in 0..nk {
                out[[t, u, k]] = reward[[t, u, k]] + discounts[t] * acc[[u, k]];
            }
        }
    }
    out
}

fn sup_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// V ← R + T[τ] P V until the sup-norm change falls below `tol`.
pub fn compute_value(
    reward: &Array3<f64>,
    transition: &Array5<f64>,
    discounts: &[f64],
    start: Option<&Array3<f64>>,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueSolution> {
    if let Some(bad) = discounts.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(Error::Validation(format!(
            "discount {bad} outside [0, 1)"
        )));
    }
    let mut value = match start {
        Some(v) if v.dim() == reward.dim() => v.clone(),
        _ => Array3::zeros(reward.raw_dim()),
    };
    let mut change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let next = bellman_backup(reward, transition, discounts, &value);
        change = sup_diff(&next, &value);
        value = next;
        if change < tol {
            let residual = sup_diff(&bellman_backup(reward, transition, discounts, &value), &value);
            if residual < tol {
                return Ok(ValueSolution {
                    value,
                    residual,
                    sweeps: sweep,
                });
            }
        }
    }
    Err(Error::NotConverged {
        what: "value iteration",
        iterations: max_sweeps,
        residual: change,
    })
}

/// Q[τ,u,k,a] = ξ[u,a] + T[τ] Σ_{u*,k*} ρ[τ,u*,k*,u,k,a] V[τ,u*,k*];
/// infeasible actions (a > k) hold −∞.
pub fn compute_q(
    xi: &Array2<f64>,
    rho: &Rho,
    value: &Array3<f64>,
    discounts: &[f64],
) -> Array4<f64> {
    let (nt, nu, nk) = value.dim();
    let na = xi.dim().1;
    let no = rho.gamma.dim().0;
    let mut q = Array4::from_elem((nt, nu, nk, na), f64::NEG_INFINITY);
    // w[o,k*] = Σ_{u*} Ψ[τ,u*,u,o] V[τ,u*,k*]
    let mut w = Array2::<f64>::zeros((no, nk));
    for t in 0..nt {
        for u in 0..nu {
            w.fill(0.0);
            for o in 0..no {
                for un in 0..nu {
                    let psi = rho.psi[[t, un, u, o]];
                    if psi == 0.0 {
                        continue;
                    }
                    for kn in 0..nk {
                        w[[o, kn]] += psi * value[[t, un, kn]];
                    }
                }
            }
            for k in 0..nk {
                for a in 0..na.min(k + 1) {
                    let mut cont = 0.0;
                    for o in 0..no {
                        let g = rho.gamma[[o, a]];
                        if g == 0.0 {
                            continue;
                        }
                        let mut s = 0.0;
                        for kn in 0..nk {
                            s += rho.kappa[[kn, k, a]] * w[[o, kn]];
                        }
                        cont += g * s;
                    }
                    q[[t, u, k, a]] = xi[[u, a]] + discounts[t] * cont;
                }
            }
        }
    }
    q
}

/// Softmax of λQ over feasible actions with max subtraction; −∞ entries get
/// exactly zero mass.
pub fn perturbed_best_response(q: &Array4<f64>, lambda: f64) -> Array4<f64> {
    let mut out = Array4::zeros(q.raw_dim());
    let (nt, nu, nk, na) = q.dim();
    let mut weights = vec![0.0; na];
    for t in 0..nt {
        for u in 0..nu {
            for k in 0..nk {
                let best = (0..na)
                    .map(|a| q[[t, u, k, a]])
                    .fold(f64::NEG_INFINITY, f64::max);
                debug_assert!(best.is_finite(), "bid 0 is always feasible");
                let mut total = 0.0;
                for a in 0..na {
                    let v = q[[t, u, k, a]];
                    weights[a] = if v == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (lambda * v - lambda * best).exp()
                    };
                    total += weights[a];
                }
                for a in 0..na {
                    out[[t, u, k, a]] = weights[a] / total;
                }
            }
        }
    }
    out
}

/// π ← (1−ηϖ)π + ηϖ π̃ and d ← (1−ϖ)d + ϖ dP.
pub fn update_social_state(
    state: &SocialState,
    perturbed: &Array4<f64>,
    transition: &Array5<f64>,
    omega: f64,
    eta: f64,
) -> SocialState {
    let step = eta * omega;
    let policy = &state.policy * (1.0 - step) + perturbed * step;
    let (nt, nu, nk) = state.distribution.dim();
    let mut pushed = Array3::<f64>::zeros((nt, nu, nk));
    for t in 0..nt {
        for un in 0..nu {
            for kn in 0..nk {
                let mut s = 0.0;
                for u in 0..nu {
                    for k in 0..nk {
                        s += state.distribution[[t, u, k]] * transition[[t, un, kn, u, k]];
                    }
                }
                pushed[[t, un, kn]] = s;
            }
        }
    }
    let distribution = &state.distribution * (1.0 - omega) + pushed * omega;
    SocialState {
        policy,
        distribution,
    }
}

/// All intermediate products of one iteration.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub nu: Array1<f64>,
    pub gamma: Array2<f64>,
    pub kappa: Array3<f64>,
    pub xi: Array2<f64>,
    pub rho: Rho,
    pub reward: Array3<f64>,
    pub transition: Array5<f64>,
    pub value: Array3<f64>,
    pub value_residual: f64,
    pub value_sweeps: usize,
    pub q: Array4<f64>,
    pub perturbed_policy: Array4<f64>,
}

/// Computes every intermediate product for `state`, in dependency order.
pub fn compute_workspace(
    spec: &GameSpec,
    state: &SocialState,
    lambda: f64,
    v_tol: f64,
    v_max_iterations: usize,
    value_start: Option<&Array3<f64>>,
) -> Result<Workspace> {
    let discounts: Vec<f64> = spec.types.iter().map(|t| t.discount).collect();
    let nu = compute_nu(state)?;
    let gamma = compute_gamma(&nu, spec.outcome_model.as_ref(), spec.participants)?;
    let kappa = compute_kappa(
        &nu,
        spec.outcome_model.as_ref(),
        spec.karma_model.as_ref(),
        spec.participants,
        state.karma_len(),
        spec.overflow.redistributes(),
    )?;
    let xi = compute_xi(&gamma, &spec.cost);
    let rho = compute_rho(&gamma, &kappa, spec.urgency_model.as_ref(), spec.num_types());
    let reward = compute_reward(&state.policy, &xi);
    let transition = compute_transition(&state.policy, &rho);
    let solved = compute_value(
        &reward,
        &transition,
        &discounts,
        value_start,
        v_tol,
        v_max_iterations,
    )?;
    let q = compute_q(&xi, &rho, &solved.value, &discounts);
    let perturbed_policy = perturbed_best_response(&q, lambda);
    Ok(Workspace {
        nu,
        gamma,
        kappa,
        xi,
        rho,
        reward,
        transition,
        value: solved.value,
        value_residual: solved.residual,
        value_sweeps: solved.sweeps,
        q,
        perturbed_policy,
    })
}
