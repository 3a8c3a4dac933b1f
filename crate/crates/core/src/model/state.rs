use ndarray::{s, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{check_normalized, Karma};
use crate::error::{Error, Result};

/// Policy π[τ,u,k,a] and distribution d[τ,u,k] over contiguous Karma axis
/// `0..=max_karma` and action axis `0..=max_action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialState {
    pub policy: Array4<f64>,
    pub distribution: Array3<f64>,
}

impl SocialState {
    pub fn new(policy: Array4<f64>, distribution: Array3<f64>) -> Result<Self> {
        let (t, u, k, _) = policy.dim();
        if distribution.dim() != (t, u, k) {
            return Err(Error::Validation(format!(
                "policy shape {:?} does not match distribution shape {:?}",
                policy.dim(),
                distribution.dim()
            )));
        }
        Ok(Self {
            policy,
            distribution,
        })
    }

    pub fn num_types(&self) -> usize {
        self.distribution.dim().0
    }

    pub fn num_urgencies(&self) -> usize {
        self.distribution.dim().1
    }

    /// Number of entries on the Karma axis (`max_karma + 1`).
    pub fn karma_len(&self) -> usize {
        self.distribution.dim().2
    }

    pub fn action_len(&self) -> usize {
        self.policy.dim().3
    }

    pub fn max_karma(&self) -> Karma {
        (self.karma_len() - 1) as Karma
    }

    pub fn max_action(&self) -> Karma {
        (self.action_len() - 1) as Karma
    }

    pub fn total_mass(&self) -> f64 {
        self.distribution.sum()
    }

    pub fn mean_karma(&self) -> f64 {
        self.distribution
            .indexed_iter()
            .map(|((_, _, k), d)| k as f64 * d)
            .sum()
    }

    /// Marginal of d over the Karma axis.
    pub fn karma_marginal(&self) -> Vec<f64> {
        (0..self.karma_len())
            .map(|k| self.distribution.slice(s![.., .., k]).sum())
            .collect()
    }

    /// Largest violation of Σ_a π = 1 over all rows.
    pub fn policy_row_error(&self) -> f64 {
        self.policy
            .lanes(ndarray::Axis(3))
            .into_iter()
            .map(|row| (row.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy padded with zeros to the given axis lengths.
    pub fn grown(&self, karma_len: usize, action_len: usize) -> Self {
        let (t, u, k, a) = self.policy.dim();
        let karma_len = karma_len.max(k);
        let action_len = action_len.max(a);
        let mut policy = Array4::zeros((t, u, karma_len, action_len));
        policy.slice_mut(s![.., .., ..k, ..a]).assign(&self.policy);
        let mut distribution = Array3::zeros((t, u, karma_len));
        distribution
            .slice_mut(s![.., .., ..k])
            .assign(&self.distribution);
        // New Karma rows start with the bottom policy, which is feasible.
        for ti in 0..t {
            for ui in 0..u {
                for ki in k..karma_len {
                    policy[[ti, ui, ki, 0]] = 1.0;
                }
            }
        }
        Self {
            policy,
            distribution,
        }
    }

    /// Whether π puts mass only on feasible bids (a ≤ k).
    pub fn is_feasible(&self) -> bool {
        self.policy
            .indexed_iter()
            .all(|((_, _, k, a), p)| a <= k || *p == 0.0)
    }
}

/// How the initial Karma is spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DistributionInit {
    /// Every agent holds exactly the average.
    AllAtAverage,
    /// Uniform over `avg - half_width ..= avg + half_width`.
    UniformBand { half_width: Karma },
}

/// Initial policy shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    /// Always bid 0.
    Bottom,
    /// Uniform over all feasible bids.
    #[default]
    Even,
    /// Always bid as much as possible.
    Top,
}

/// Initial d[τ,u,k] as a product of type shares, urgency shares and a Karma
/// profile with the requested mean.
pub fn build_initial_distribution(
    type_weights: &[f64],
    urgency_weights: &[f64],
    avg_karma: Karma,
    mode: DistributionInit,
    max_karma: Karma,
) -> Result<Array3<f64>> {
    check_normalized("type weights", type_weights)?;
    check_normalized("urgency weights", urgency_weights)?;
    if avg_karma > max_karma {
        return Err(Error::Range(format!(
            "average Karma {avg_karma} lies outside the Karma axis 0..={max_karma}"
        )));
    }
    let mut profile = vec![0.0; max_karma as usize + 1];
    match mode {
        DistributionInit::AllAtAverage => profile[avg_karma as usize] = 1.0,
        DistributionInit::UniformBand { half_width } => {
            if half_width > avg_karma || avg_karma + half_width > max_karma {
                return Err(Error::Range(format!(
                    "band {avg_karma}±{half_width} does not fit the Karma axis 0..={max_karma}"
                )));
            }
            let width = 2 * half_width + 1;
            for k in avg_karma - half_width..=avg_karma + half_width {
                profile[k as usize] = 1.0 / f64::from(width);
            }
        }
    }
    let mut d = Array3::zeros((type_weights.len(), urgency_weights.len(), profile.len()));
    for ((t, u, k), v) in d.indexed_iter_mut() {
        *v = type_weights[t] * urgency_weights[u] * profile[k];
    }
    Ok(d)
}

/// Initial π[τ,u,k,a] with bids capped at `min(k, max_action)`.
pub fn build_initial_policy(
    mode: PolicyInit,
    num_types: usize,
    num_urgencies: usize,
    karma_len: usize,
    action_len: usize,
) -> Result<Array4<f64>> {
    if action_len == 0 || karma_len == 0 {
        return Err(Error::Validation(
            "Karma and action axes must be non-empty".into(),
        ));
    }
    let mut pi = Array4::zeros((num_types, num_urgencies, karma_len, action_len));
    for t in 0..num_types {
        for u in 0..num_urgencies {
            for k in 0..karma_len {
                let top = k.min(action_len - 1);
                match mode {
                    PolicyInit::Bottom => pi[[t, u, k, 0]] = 1.0,
                    PolicyInit::Top => pi[[t, u, k, top]] = 1.0,
                    PolicyInit::Even => {
                        let p = 1.0 / (top + 1) as f64;
                        for a in 0..=top {
                            pi[[t, u, k, a]] = p;
                        }
                    }
                }
            }
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_mass_at_average() {
        let d = build_initial_distribution(&[1.0], &[1.0], 6, DistributionInit::AllAtAverage, 24)
            .unwrap();
        assert_eq!(d[[0, 0, 6]], 1.0);
        assert_eq!(d.sum(), 1.0);
    }

    #[test]
    fn two_types_keep_mean() {
        let d = build_initial_distribution(
            &[0.5, 0.5],
            &[0.5, 0.5],
            6,
            DistributionInit::AllAtAverage,
            24,
        )
        .unwrap();
        let mean: f64 = d.indexed_iter().map(|((_, _, k), v)| k as f64 * v).sum();
        assert_eq!(mean, 6.0);
    }

    #[test]
    fn uniform_band_moments_by_summation() {
        let d = build_initial_distribution(
            &[1.0],
            &[0.5, 0.5],
            6,
            DistributionInit::UniformBand { half_width: 2 },
            24,
        )
        .unwrap();
        let mut mass = 0.0;
        let mut mean = 0.0;
        for u in 0..2 {
            for k in 0..25 {
                mass += d[[0, u, k]];
                mean += k as f64 * d[[0, u, k]];
                if !(4..=8).contains(&k) {
                    assert_eq!(d[[0, u, k]], 0.0);
                }
            }
        }
        assert_relative_eq!(mass, 1.0, epsilon = 1e-15);
        assert_relative_eq!(mean, 6.0, epsilon = 1e-14);
    }

    #[test]
    fn distribution_errors() {
        assert!(matches!(
            build_initial_distribution(&[0.6, 0.6], &[1.0], 6, DistributionInit::AllAtAverage, 24),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            build_initial_distribution(&[1.0], &[1.0], 30, DistributionInit::AllAtAverage, 24),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn policy_modes() {
        let bottom = build_initial_policy(PolicyInit::Bottom, 1, 1, 10, 7).unwrap();
        assert!((0..10).all(|k| bottom[[0, 0, k, 0]] == 1.0));
        let even = build_initial_policy(PolicyInit::Even, 1, 1, 10, 7).unwrap();
        for a in 0..4 {
            assert_eq!(even[[0, 0, 3, a]], 0.25);
        }
        assert_eq!(even[[0, 0, 3, 4]], 0.0);
        let top = build_initial_policy(PolicyInit::Top, 1, 1, 10, 7).unwrap();
        assert_eq!(top[[0, 0, 2, 2]], 1.0);
        assert_eq!(top[[0, 0, 9, 6]], 1.0);
        for pi in [bottom, even, top] {
            let state = SocialState::new(pi, Array3::zeros((1, 1, 10))).unwrap();
            assert!(state.is_feasible());
            assert!(state.policy_row_error() < 1e-12);
        }
    }

    #[test]
    fn growing_pads_with_feasible_rows() {
        let pi = build_initial_policy(PolicyInit::Even, 1, 2, 5, 3).unwrap();
        let d = build_initial_distribution(&[1.0], &[0.5, 0.5], 2, DistributionInit::AllAtAverage, 4)
            .unwrap();
        let state = SocialState::new(pi, d).unwrap();
        let big = state.grown(9, 4);
        assert_eq!(big.karma_len(), 9);
        assert_eq!(big.action_len(), 4);
        assert!(big.policy_row_error() < 1e-12);
        assert_eq!(big.total_mass(), 1.0);
        assert!(big.is_feasible());
    }
}
