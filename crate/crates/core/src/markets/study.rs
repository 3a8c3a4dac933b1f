//! End-to-end case study: per-scenario money and Karma pricing, the
//! cost–benefit comparison and the inequality sweep.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::calibrate::Anchors;
use super::corridor::{CorridorModel, FlowSplit};
use super::karma::{
    interpolate_crossing, karma_threshold_sweep, KarmaCrossing, KarmaPoint, KarmaPricingConfig,
};
use super::money::{money_equilibrium, optimal_toll, CostBreakdown, MoneyEquilibrium};
use super::population::{geometric_urgency, gini, lognormal_strata, SalaryTable, VotPopulation};
use crate::error::{Error, Result};
use crate::model::Bid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrgencyScenario {
    pub name: String,
    /// Geometric parameter of the urgency law over levels 1..=10.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TollGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for TollGrid {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 40.0,
            step: 1.0,
        }
    }
}

impl TollGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step).floor() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GiniSweepConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub strata: usize,
    /// Mean hourly wage of the synthetic laws; defaults to the salary
    /// table's mean.
    pub mean_wage: Option<f64>,
}

impl Default for GiniSweepConfig {
    fn default() -> Self {
        Self {
            min: 0.20,
            max: 0.50,
            points: 10,
            strata: 40,
            mean_wage: None,
        }
    }
}

impl GiniSweepConfig {
    pub fn targets(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseStudyConfig {
    pub corridor: CorridorModel,
    pub anchors: Anchors,
    /// Relative anchor residual above which calibration fails.
    pub calibration_tolerance: f64,
    pub scenarios: Vec<UrgencyScenario>,
    /// `annual_income,weight` table; the bundled table when absent.
    pub salary_table: Option<PathBuf>,
    pub karma: KarmaPricingConfig,
    pub tolls: TollGrid,
    pub thresholds: Vec<Bid>,
    pub gini: GiniSweepConfig,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            corridor: CorridorModel::default(),
            anchors: Anchors::default(),
            calibration_tolerance: 0.01,
            scenarios: vec![
                UrgencyScenario {
                    name: "p=0.6".into(),
                    p: 0.6,
                },
                UrgencyScenario {
                    name: "p=0.5".into(),
                    p: 0.5,
                },
                UrgencyScenario {
                    name: "p=0.4".into(),
                    p: 0.4,
                },
            ],
            salary_table: None,
            karma: KarmaPricingConfig::default(),
            tolls: TollGrid::default(),
            thresholds: (0..=10).collect(),
            gini: GiniSweepConfig::default(),
        }
    }
}

impl CaseStudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.corridor.validate()?;
        self.karma.solver.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        for s in &self.scenarios {
            if !(s.p > 0.0 && s.p <= 1.0) {
                return Err(Error::Config(format!("scenario {}: p must be in (0, 1]", s.name)));
            }
        }
        if !(self.tolls.step > 0.0 && self.tolls.max >= self.tolls.min && self.tolls.min >= 0.0) {
            return Err(Error::Config("tolls: need 0 <= min <= max and step > 0".into()));
        }
        if self.thresholds.len() < 2 {
            return Err(Error::Config("thresholds: need at least two values".into()));
        }
        let g = &self.gini;
        if !(g.min > 0.0 && g.max < 1.0 && g.min <= g.max && g.strata > 0) {
            return Err(Error::Config(
                "gini: need 0 < min <= max < 1 and at least one stratum".into(),
            ));
        }
        if !(self.karma.discount >= 0.0 && self.karma.discount < 1.0) {
            return Err(Error::Config("karma.discount must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn salary_table(&self) -> Result<SalaryTable> {
        match &self.salary_table {
            None => Ok(SalaryTable::bundled()),
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| {
                    Error::Config(format!("salary_table {}: {e}", path.display()))
                })?;
                SalaryTable::from_csv(file)
            }
        }
    }
}

/// One row of the cost–benefit comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: &'static str,
    pub tunnel_share: f64,
    pub avg_minutes: f64,
    pub total_vehicle_hours: f64,
    pub costs: CostBreakdown,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub unpriced: ComparisonRow,
    pub money: ComparisonRow,
    pub karma: ComparisonRow,
}

impl ComparisonTable {
    pub fn rows(&self) -> [&ComparisonRow; 3] {
        [&self.unpriced, &self.money, &self.karma]
    }
}

fn money_row(label: &'static str, eq: &MoneyEquilibrium) -> ComparisonRow {
    ComparisonRow {
        label,
        tunnel_share: eq.tunnel_share(),
        avg_minutes: eq.split.average_minutes(),
        total_vehicle_hours: eq.split.total_vehicle_hours,
        costs: eq.costs,
    }
}

/// Karma outcome on the corridor: tunnel access by urgency level only, so
/// every wage stratum sees the same share.
#[derive(Debug, Clone, Serialize)]
pub struct KarmaAllocation {
    pub split: FlowSplit,
    pub share_by_urgency: Vec<f64>,
    pub minutes_by_urgency: Vec<f64>,
    pub share_by_wage: Vec<f64>,
    pub minutes_by_wage: Vec<f64>,
    pub costs: CostBreakdown,
}

pub fn karma_allocation(
    model: &CorridorModel,
    pop: &VotPopulation,
    crossing: &KarmaCrossing,
) -> KarmaAllocation {
    let share: f64 = crossing
        .share_by_urgency
        .iter()
        .zip(&pop.urgency_weights)
        .map(|(s, w)| s * w)
        .sum();
    let split = model.split(share * model.total_demand);
    let minutes = |s: f64| s * split.tunnel_minutes + (1.0 - s) * split.bridge_minutes;
    let minutes_by_urgency: Vec<f64> = crossing.share_by_urgency.iter().map(|s| minutes(*s)).collect();
    let mean_wage = pop.mean_wage();
    let time = pop
        .levels()
        .zip(&pop.urgency_weights)
        .zip(&minutes_by_urgency)
        .map(|((u, w), m)| w * mean_wage * u * m / 60.0)
        .sum();
    let tunnel_share = split.tunnel_share();
    KarmaAllocation {
        split,
        share_by_urgency: crossing.share_by_urgency.clone(),
        minutes_by_urgency,
        share_by_wage: vec![tunnel_share; pop.wages.len()],
        minutes_by_wage: vec![minutes(tunnel_share); pop.wages.len()],
        costs: CostBreakdown {
            fuel: tunnel_share * model.tunnel_fuel() + (1.0 - tunnel_share) * model.bridge_fuel(),
            fee: 0.0,
            time,
        },
    }
}

pub fn cost_benefit(
    unpriced: &MoneyEquilibrium,
    money: &MoneyEquilibrium,
    karma: &KarmaAllocation,
) -> ComparisonTable {
    ComparisonTable {
        unpriced: money_row("unpriced", unpriced),
        money: money_row("money", money),
        karma: ComparisonRow {
            label: "karma",
            tunnel_share: karma.split.tunnel_share(),
            avg_minutes: karma.split.average_minutes(),
            total_vehicle_hours: karma.split.total_vehicle_hours,
            costs: karma.costs,
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioPricing {
    pub scenario: UrgencyScenario,
    pub urgency_weights: Vec<f64>,
    pub optimum: FlowSplit,
    pub toll_curve: Vec<(f64, f64)>,
    pub optimal_toll: f64,
    pub unpriced: MoneyEquilibrium,
    pub money: MoneyEquilibrium,
    pub karma_points: Vec<KarmaPoint>,
    pub karma_crossing: Option<KarmaCrossing>,
    pub karma: Option<KarmaAllocation>,
    pub table: Option<ComparisonTable>,
}

/// Money and Karma pricing for one urgency scenario, both aimed at the
/// system-optimal tunnel share.
pub fn price_scenario(
    config: &CaseStudyConfig,
    model: &CorridorModel,
    table: &SalaryTable,
    scenario: &UrgencyScenario,
    threads: usize,
) -> Result<ScenarioPricing> {
    let urgency_weights = geometric_urgency(scenario.p)?;
    let pop = VotPopulation::from_table(table, urgency_weights.clone())?;
    let optimum = model.system_optimum();
    let target = optimum.tunnel_share();

    let toll_curve = config
        .tolls
        .points()
        .into_iter()
        .map(|t| money_equilibrium(model, &pop, t).map(|e| (t, e.tunnel_share())))
        .collect::<Result<Vec<_>>>()?;
    let unpriced = money_equilibrium(model, &pop, 0.0)?;
    let opt = optimal_toll(model, &pop, target)?;

    let saving_hours = model.time_saving(optimum.tunnel_flow) / 60.0;
    let karma_points = karma_threshold_sweep(
        &urgency_weights,
        &config.thresholds,
        saving_hours,
        &config.karma,
        threads,
    )?;
    let karma_crossing = interpolate_crossing(&karma_points, target, &urgency_weights);
    let karma = karma_crossing
        .as_ref()
        .map(|c| karma_allocation(model, &pop, c));
    let table = karma
        .as_ref()
        .map(|k| cost_benefit(&unpriced, &opt.equilibrium, k));
    Ok(ScenarioPricing {
        scenario: scenario.clone(),
        urgency_weights,
        optimum,
        toll_curve,
        optimal_toll: opt.toll,
        unpriced,
        money: opt.equilibrium,
        karma_points,
        karma_crossing,
        karma,
        table,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GiniPoint {
    pub scenario: String,
    pub gini_target: f64,
    pub gini_realized: f64,
    pub optimal_toll: f64,
    pub money_avg_urgency_tunnel: f64,
    pub karma_avg_urgency_tunnel: f64,
}

/// Money alignment (mean urgency on the tunnel at the optimal toll) across
/// lognormal wage laws of varying Gini. The Karma allocation never looks at
/// wages, so its alignment is carried over unchanged from `karma_alignment`.
pub fn gini_sweep(
    config: &CaseStudyConfig,
    model: &CorridorModel,
    mean_wage: f64,
    scenario: &UrgencyScenario,
    karma_alignment: f64,
) -> Result<Vec<GiniPoint>> {
    let urgency = geometric_urgency(scenario.p)?;
    let target = model.system_optimum().tunnel_share();
    let mean = config.gini.mean_wage.unwrap_or(mean_wage);
    config
        .gini
        .targets()
        .into_iter()
        .map(|g| {
            let (wages, weights) = lognormal_strata(g, mean, config.gini.strata)?;
            let gini_realized = gini(&wages, &weights);
            let pop = VotPopulation::new(wages, weights, urgency.clone())?;
            let opt = optimal_toll(model, &pop, target)?;
            Ok(GiniPoint {
                scenario: scenario.name.clone(),
                gini_target: g,
                gini_realized,
                optimal_toll: opt.toll,
                money_avg_urgency_tunnel: opt.equilibrium.avg_urgency_tunnel,
                karma_avg_urgency_tunnel: karma_alignment,
            })
        })
        .collect()
}

/// Gini at which the money alignment curve drops to the Karma level, by
/// linear interpolation; `None` if the curves do not cross on the grid.
pub fn alignment_crossover(points: &[GiniPoint]) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        let da = a.money_avg_urgency_tunnel - a.karma_avg_urgency_tunnel;
        let db = b.money_avg_urgency_tunnel - b.karma_avg_urgency_tunnel;
        if da >= 0.0 && db <= 0.0 && da != db {
            Some(a.gini_target + (b.gini_target - a.gini_target) * da / (da - db))
        } else if da == 0.0 {
            Some(a.gini_target)
        } else {
            None
        }
    })
}
