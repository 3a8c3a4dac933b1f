//! Two-route congestion-pricing case study: corridor model, monetary tolls,
//! Karma threshold prices, cost accounting and inequality sweeps.

pub mod calibrate;
pub mod corridor;
pub mod karma;
pub mod money;
pub mod population;
pub mod study;
pub mod tables;

pub use calibrate::{anchor_residuals, calibrate_corridor, Anchors, Calibration};
pub use corridor::{CorridorModel, FlowSplit, Route};
pub use karma::{
    interpolate_crossing, karma_threshold_equilibrium, karma_threshold_sweep, KarmaCrossing,
    KarmaPoint, KarmaPricingConfig,
};
pub use money::{money_equilibrium, optimal_toll, CostBreakdown, MoneyEquilibrium, OptimalToll};
pub use population::{gini, lognormal_strata, SalaryTable, VotPopulation};
pub use study::{
    alignment_crossover, cost_benefit, gini_sweep, karma_allocation, price_scenario,
    CaseStudyConfig, ComparisonRow, ComparisonTable, GiniPoint, ScenarioPricing, UrgencyScenario,
};
