//! Driver population: wage strata crossed with independent urgency levels.

use std::io::Read;

use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::templates::truncated_geometric;

/// Paid hours per year used to turn annual income into an hourly wage.
pub const HOURS_PER_YEAR: f64 = 2080.0;
/// Urgency levels run 1..=URGENCY_LEVELS.
pub const URGENCY_LEVELS: usize = 10;

const BUNDLED_SALARIES: &str = include_str!("data/salary_table.csv");

/// Binned household incomes: one representative annual income per bin and
/// the share of households in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SalaryTable {
    pub annual_income: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Deserialize)]
struct SalaryRow {
    annual_income: f64,
    weight: f64,
}

impl SalaryTable {
    /// Reads `annual_income,weight` rows (header required, `#` comments
    /// allowed). Weights are normalized.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut annual_income = Vec::new();
        let mut weights = Vec::new();
        for (i, row) in reader.deserialize::<SalaryRow>().enumerate() {
            let row = row.map_err(|e| Error::Config(format!("salary table row {}: {e}", i + 1)))?;
            if !(row.annual_income.is_finite() && row.annual_income > 0.0) {
                return Err(Error::Config(format!(
                    "salary table row {}: income must be positive",
                    i + 1
                )));
            }
            if !(row.weight.is_finite() && row.weight >= 0.0) {
                return Err(Error::Config(format!(
                    "salary table row {}: weight must be >= 0",
                    i + 1
                )));
            }
            annual_income.push(row.annual_income);
            weights.push(row.weight);
        }
        let total: f64 = weights.iter().sum();
        if annual_income.is_empty() || total <= 0.0 {
            return Err(Error::Config("salary table has no weight".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            annual_income,
            weights,
        })
    }

    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_SALARIES.as_bytes()).expect("bundled salary table parses")
    }

    pub fn hourly_wages(&self) -> Vec<f64> {
        self.annual_income.iter().map(|a| a / HOURS_PER_YEAR).collect()
    }
}

/// Joint law of value of time: wage stratum × urgency level, independent.
#[derive(Debug, Clone, PartialEq)]
pub struct VotPopulation {
    /// currency/hour, one per stratum
    pub wages: Vec<f64>,
    pub wage_weights: Vec<f64>,
    /// Weight of urgency level `i + 1`.
    pub urgency_weights: Vec<f64>,
}

impl VotPopulation {
    pub fn new(wages: Vec<f64>, wage_weights: Vec<f64>, urgency_weights: Vec<f64>) -> Result<Self> {
        let pop = Self {
            wages,
            wage_weights,
            urgency_weights,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn from_table(table: &SalaryTable, urgency_weights: Vec<f64>) -> Result<Self> {
        Self::new(table.hourly_wages(), table.weights.clone(), urgency_weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wages.is_empty() || self.wages.len() != self.wage_weights.len() {
            return Err(Error::Validation(
                "need one weight per wage stratum and at least one stratum".into(),
            ));
        }
        if self.urgency_weights.len() != URGENCY_LEVELS {
            return Err(Error::Validation(format!(
                "urgency law must cover levels 1..={URGENCY_LEVELS}, got {} weights",
                self.urgency_weights.len()
            )));
        }
        if self.wages.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("wages must be finite and >= 0".into()));
        }
        crate::model::check_normalized("wage weights", &self.wage_weights)?;
        crate::model::check_normalized("urgency weights", &self.urgency_weights)?;
        Ok(())
    }

    pub fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.urgency_weights.len()).map(|l| l as f64)
    }

    pub fn mean_wage(&self) -> f64 {
        self.wages.iter().zip(&self.wage_weights).map(|(w, p)| w * p).sum()
    }

    pub fn mean_urgency(&self) -> f64 {
        self.levels().zip(&self.urgency_weights).map(|(u, p)| u * p).sum()
    }

    pub fn gini(&self) -> f64 {
        gini(&self.wages, &self.wage_weights)
    }
}

/// Geometric urgency law over levels 1..=10, renormalized after truncation.
pub fn geometric_urgency(p: f64) -> Result<Vec<f64>> {
    truncated_geometric(p, URGENCY_LEVELS)
}

/// Weighted Gini coefficient: mean absolute difference over twice the mean.
pub fn gini(values: &[f64], weights: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|(_, w)| *w > 0.0)
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mean: f64 = pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
    if mean <= 0.0 {
        return 0.0;
    }
    // Σ_i Σ_j w_i w_j |x_i − x_j| = 2 Σ_i w_i x_i (W_below − W_above)
    let mut below = 0.0;
    let mut acc = 0.0;
    for &(x, w) in &pairs {
        let above = total - below - w;
        acc += w * x * (below - above);
        below += w;
    }
    let mad = 2.0 * acc / (total * total);
    mad / (2.0 * mean)
}

/// Lognormal σ whose Gini is `g`: G = 2Φ(σ/√2) − 1.
pub fn lognormal_sigma_for_gini(g: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::Range(format!("Gini {g} outside (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std::f64::consts::SQRT_2 * std.inverse_cdf(0.5 * (g + 1.0)))
}

/// `n` equal-probability strata of a lognormal wage law with the given mean
/// and Gini; each stratum carries its conditional mean, so the overall mean
/// is exact.
pub fn lognormal_strata(gini_target: f64, mean: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || !(mean > 0.0) {
        return Err(Error::Range("need n >= 1 strata and a positive mean".into()));
    }
    let sigma = lognormal_sigma_for_gini(gini_target)?;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let edges: Vec<f64> = (0..=n)
        .map(|i| match i {
            0 => f64::NEG_INFINITY,
            i if i == n => f64::INFINITY,
            i => std.inverse_cdf(i as f64 / n as f64),
        })
        .collect();
    // E[X; a < Z < b] = mean · (Φ(b − σ) − Φ(a − σ)) for X = mean·exp(σZ − σ²/2)
    let wages = edges
        .windows(2)
        .map(|e| mean * n as f64 * (std.cdf(e[1] - sigma) - std.cdf(e[0] - sigma)))
        .collect();
    Ok((wages, vec![1.0 / n as f64; n]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pairwise_gini(x: &[f64], w: &[f64]) -> f64 {
        let total: f64 = w.iter().sum();
        let mean: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                s += w[i] * w[j] * (x[i] - x[j]).abs();
            }
        }
        s / (total * total) / (2.0 * mean)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_abs_diff_eq!(gini(&[0.0, 7.0], &[1.0, 1.0]), 0.5, epsilon = 1e-12);
        let x = [3.0, 1.0, 8.0, 20.0, 2.5];
        let w = [0.1, 0.4, 0.2, 0.05, 0.25];
        assert_abs_diff_eq!(gini(&x, &w), pairwise_gini(&x, &w), epsilon = 1e-12);
    }

    #[test]
    fn bundled_table_gini() {
        let table = SalaryTable::bundled();
        let g = gini(&table.annual_income, &table.weights);
        assert!((g - 0.375).abs() <= 0.01, "gini {g}");
    }

    #[test]
    fn lognormal_strata_hit_gini_and_mean() {
        for g in [0.2, 0.375, 0.5] {
            let (w, p) = lognormal_strata(g, 70.0, 40).unwrap();
            let mean: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(mean, 70.0, epsilon = 1e-9);
            let realized = gini(&w, &p);
            // discretization only removes within-stratum spread
            assert!(realized <= g && realized > g - 0.005, "{g} -> {realized}");
        }
    }

    #[test]
    fn sigma_inverts_closed_form() {
        let std = Normal::new(0.0, 1.0).unwrap();
        let s = lognormal_sigma_for_gini(0.375).unwrap();
        assert_abs_diff_eq!(2.0 * std.cdf(s / 2f64.sqrt()) - 1.0, 0.375, epsilon = 1e-12);
        assert!(lognormal_sigma_for_gini(1.0).is_err());
    }

    #[test]
    fn table_parsing() {
        let t = SalaryTable::from_csv("annual_income,weight\n# c\n20000, 1\n40000,3\n".as_bytes())
            .unwrap();
        assert_eq!(t.weights, vec![0.25, 0.75]);
        assert_abs_diff_eq!(t.hourly_wages()[0], 20000.0 / 2080.0);
        assert!(SalaryTable::from_csv("annual_income,weight\n-1,1\n".as_bytes()).is_err());
        assert!(SalaryTable::from_csv("annual_income,weight\n".as_bytes()).is_err());
    }

    #[test]
    fn population_validation() {
        let u = geometric_urgency(0.6).unwrap();
        assert!(VotPopulation::new(vec![10.0], vec![1.0], u.clone()).is_ok());
        assert!(VotPopulation::new(vec![10.0], vec![1.0], vec![1.0]).is_err());
        assert!(VotPopulation::new(vec![10.0, 2.0], vec![1.0], u).is_err());
    }
}
