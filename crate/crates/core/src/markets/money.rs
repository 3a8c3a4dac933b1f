//! Route choice under a monetary tunnel toll.

use serde::Serialize;

use super::corridor::{CorridorModel, FlowSplit};
use super::population::VotPopulation;
use crate::error::{Error, Result};

/// Per-user cost averages (currency per trip).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub fuel: f64,
    pub fee: f64,
    pub time: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.fuel + self.fee + self.time
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MoneyEquilibrium {
    pub toll: f64,
    pub split: FlowSplit,
    /// Fraction of each (wage stratum, urgency level) cell on the tunnel.
    pub choice: Vec<Vec<f64>>,
    pub share_by_wage: Vec<f64>,
    pub share_by_urgency: Vec<f64>,
    /// Expected minutes for each wage stratum.
    pub minutes_by_wage: Vec<f64>,
    pub minutes_by_urgency: Vec<f64>,
    pub avg_urgency_tunnel: f64,
    pub avg_urgency_bridge: f64,
    pub costs: CostBreakdown,
    /// Largest saving (currency) any cell could make by switching route.
    pub max_switch_gain: f64,
    pub bisection_steps: usize,
}

impl MoneyEquilibrium {
    pub fn tunnel_share(&self) -> f64 {
        self.split.tunnel_share()
    }
}

/// Net benefit of the tunnel over the bridge for a driver with value of time
/// `vot` (currency/hour).
fn tunnel_gain(model: &CorridorModel, toll: f64, vot: f64, s: &FlowSplit) -> f64 {
    vot * (s.bridge_minutes - s.tunnel_minutes) / 60.0
        - (toll + model.tunnel_fuel() - model.bridge_fuel())
}

struct Cells {
    vot: Vec<f64>,
    weight: Vec<f64>,
}

impl Cells {
    fn new(pop: &VotPopulation) -> Self {
        let mut vot = Vec::new();
        let mut weight = Vec::new();
        for (w, pw) in pop.wages.iter().zip(&pop.wage_weights) {
            for (u, pu) in pop.levels().zip(&pop.urgency_weights) {
                vot.push(w * u);
                weight.push(pw * pu);
            }
        }
        Self { vot, weight }
    }

    /// Mass strictly preferring the tunnel when the tunnel carries `flow`.
    fn demand(&self, model: &CorridorModel, toll: f64, flow: f64) -> f64 {
        let s = model.split(flow);
        self.vot
            .iter()
            .zip(&self.weight)
            .filter(|(v, _)| tunnel_gain(model, toll, **v, &s) > 0.0)
            .map(|(_, w)| w)
            .sum()
    }
}

const STEPS_LIMIT: usize = 200;

/// User equilibrium under `toll`. A cell takes the tunnel iff
/// `toll + fuel_tunnel + vot·t_tunnel < fuel_bridge + vot·t_bridge`; cells
/// exactly indifferent at the equilibrium flow are split so that demand and
/// flow agree. The excess demand `D·S(f) − f` is strictly decreasing in the
/// tunnel flow `f`, so its root is found by bisection.
pub fn money_equilibrium(
    model: &CorridorModel,
    pop: &VotPopulation,
    toll: f64,
) -> Result<MoneyEquilibrium> {
    if !(toll.is_finite() && toll >= 0.0) {
        return Err(Error::Range(format!("toll must be finite and >= 0, got {toll}")));
    }
    pop.validate()?;
    let cells = Cells::new(pop);
    let total = model.total_demand;
    let excess = |f: f64| total * cells.demand(model, toll, f) - f;

    let (mut lo, mut hi) = (0.0, total);
    let mut steps = 0;
    let flow = if total == 0.0 || excess(0.0) <= 0.0 {
        hi = 0.0;
        0.0
    } else if excess(total) >= 0.0 {
        lo = total;
        total
    } else {
        while hi - lo > 1e-9 * total.max(1.0) {
            steps += 1;
            if steps > STEPS_LIMIT {
                return Err(Error::NotConverged {
                    what: "money equilibrium",
                    iterations: steps,
                    residual: hi - lo,
                });
            }
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    // Cells on the tunnel just below the root but not just above it are the
    // indifferent ones; they take whatever flow the strict movers leave.
    let below = model.split(lo);
    let above = model.split(hi);
    let on_below: Vec<bool> = cells
        .vot
        .iter()
        .map(|v| tunnel_gain(model, toll, *v, &below) > 0.0)
        .collect();
    let on_above: Vec<bool> = cells
        .vot
        .iter()
        .map(|v| tunnel_gain(model, toll, *v, &above) > 0.0)
        .collect();
    let strict: f64 = total
        * cells
            .weight
            .iter()
            .zip(&on_above)
            .filter(|(_, on)| **on)
            .map(|(w, _)| w)
            .sum::<f64>();
    let marginal: f64 = total
        * cells
            .weight
            .iter()
            .zip(on_below.iter().zip(&on_above))
            .filter(|(_, (b, a))| **b && !**a)
            .map(|(w, _)| w)
            .sum::<f64>();
    let fill = if marginal > 0.0 {
        ((flow - strict) / marginal).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let fractions: Vec<f64> = on_below
        .iter()
        .zip(&on_above)
        .map(|(b, a)| match (b, a) {
            (_, true) => 1.0,
            (true, false) => fill,
            _ => 0.0,
        })
        .collect();
    let tunnel_flow = strict + fill * marginal;
    let split = model.split(tunnel_flow);
    Ok(summarize(model, pop, toll, split, &cells, fractions, steps))
}

fn summarize(
    model: &CorridorModel,
    pop: &VotPopulation,
    toll: f64,
    split: FlowSplit,
    cells: &Cells,
    fractions: Vec<f64>,
    steps: usize,
) -> MoneyEquilibrium {
    let levels = pop.urgency_weights.len();
    let choice: Vec<Vec<f64>> = fractions.chunks(levels).map(<[f64]>::to_vec).collect();
    let share_by_wage: Vec<f64> = choice
        .iter()
        .map(|row| row.iter().zip(&pop.urgency_weights).map(|(c, p)| c * p).sum())
        .collect();
    let share_by_urgency: Vec<f64> = (0..levels)
        .map(|l| {
            choice
                .iter()
                .zip(&pop.wage_weights)
                .map(|(row, p)| row[l] * p)
                .sum()
        })
        .collect();
    let expected_minutes =
        |s: f64| s * split.tunnel_minutes + (1.0 - s) * split.bridge_minutes;
    let minutes_by_wage = share_by_wage.iter().map(|s| expected_minutes(*s)).collect();
    let minutes_by_urgency = share_by_urgency.iter().map(|s| expected_minutes(*s)).collect();
    let (avg_urgency_tunnel, avg_urgency_bridge) =
        route_urgency_means(&share_by_urgency, &pop.urgency_weights);

    let share: f64 = cells.weight.iter().zip(&fractions).map(|(w, f)| w * f).sum();
    let time: f64 = cells
        .vot
        .iter()
        .zip(&cells.weight)
        .zip(&fractions)
        .map(|((v, w), f)| w * v * expected_minutes(*f) / 60.0)
        .sum();
    let costs = CostBreakdown {
        fuel: share * model.tunnel_fuel() + (1.0 - share) * model.bridge_fuel(),
        fee: toll * share,
        time,
    };
    let max_switch_gain = cells
        .vot
        .iter()
        .zip(&fractions)
        .map(|(v, f)| {
            let g = tunnel_gain(model, toll, *v, &split);
            let mut worst: f64 = 0.0;
            if *f < 1.0 {
                worst = worst.max(g);
            }
            if *f > 0.0 {
                worst = worst.max(-g);
            }
            worst
        })
        .fold(0.0, f64::max);
    MoneyEquilibrium {
        toll,
        split,
        choice,
        share_by_wage,
        share_by_urgency,
        minutes_by_wage,
        minutes_by_urgency,
        avg_urgency_tunnel,
        avg_urgency_bridge,
        costs,
        max_switch_gain,
        bisection_steps: steps,
    }
}

/// Mean urgency level among tunnel users and among bridge users, given the
/// tunnel share of each level and the level weights.
pub fn route_urgency_means(share_by_urgency: &[f64], weights: &[f64]) -> (f64, f64) {
    let mut on = (0.0, 0.0);
    let mut off = (0.0, 0.0);
    for (i, (s, p)) in share_by_urgency.iter().zip(weights).enumerate() {
        let level = (i + 1) as f64;
        on.0 += level * s * p;
        on.1 += s * p;
        off.0 += level * (1.0 - s) * p;
        off.1 += (1.0 - s) * p;
    }
    let mean = |(num, den): (f64, f64)| if den > 0.0 { num / den } else { 0.0 };
    (mean(on), mean(off))
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalToll {
    pub toll: f64,
    pub target_share: f64,
    pub equilibrium: MoneyEquilibrium,
}

/// Smallest toll whose equilibrium tunnel share does not exceed
/// `target_share` (bisection on the non-increasing share curve, to 1e-6).
/// Fails if the result is more than 0.5 percentage points off the target.
pub fn optimal_toll(
    model: &CorridorModel,
    pop: &VotPopulation,
    target_share: f64,
) -> Result<OptimalToll> {
    let share = |toll: f64| money_equilibrium(model, pop, toll).map(|e| e.tunnel_share());
    let mut lo = 0.0;
    if share(lo)? <= target_share {
        let equilibrium = money_equilibrium(model, pop, lo)?;
        return Ok(OptimalToll {
            toll: lo,
            target_share,
            equilibrium,
        });
    }
    let mut hi = 1.0;
    while share(hi)? > target_share {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::NotConverged {
                what: "optimal toll bracket",
                iterations: 30,
                residual: share(hi)? - target_share,
            });
        }
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if share(mid)? > target_share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let equilibrium = money_equilibrium(model, pop, hi)?;
    let miss = (equilibrium.tunnel_share() - target_share).abs();
    if miss > 0.005 {
        return Err(Error::Contract(format!(
            "no toll reaches tunnel share {target_share:.4} within 0.5pp (closest {:.4})",
            equilibrium.tunnel_share()
        )));
    }
    Ok(OptimalToll {
        toll: hi,
        target_share,
        equilibrium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::population::{geometric_urgency, lognormal_strata};
    use approx::assert_abs_diff_eq;

    fn population() -> VotPopulation {
        let (w, p) = lognormal_strata(0.375, 70.0, 40).unwrap();
        VotPopulation::new(w, p, geometric_urgency(0.6).unwrap()).unwrap()
    }

    #[test]
    fn flow_is_conserved_and_no_one_wants_to_switch() {
        let model = CorridorModel::default();
        let pop = population();
        for toll in [0.0, 5.0, 18.0, 40.0] {
            let eq = money_equilibrium(&model, &pop, toll).unwrap();
            assert_abs_diff_eq!(eq.split.tunnel_flow + eq.split.bridge_flow, model.total_demand, epsilon = 1e-9);
            assert!(eq.max_switch_gain < 1e-6, "toll {toll}: {}", eq.max_switch_gain);
            let weighted: f64 = eq
                .share_by_wage
                .iter()
                .zip(&pop.wage_weights)
                .map(|(s, p)| s * p)
                .sum();
            assert_abs_diff_eq!(weighted, eq.tunnel_share(), epsilon = 1e-9);
            assert_abs_diff_eq!(
                eq.costs.total(),
                eq.costs.fuel + eq.costs.fee + eq.costs.time,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn share_is_non_increasing_in_toll() {
        let model = CorridorModel::default();
        let pop = population();
        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let s = money_equilibrium(&model, &pop, i as f64).unwrap().tunnel_share();
            assert!(s <= prev + 1e-12, "toll {i}: {s} > {prev}");
            prev = s;
        }
    }

    #[test]
    fn huge_toll_empties_the_tunnel() {
        let eq = money_equilibrium(&CorridorModel::default(), &population(), 1e7).unwrap();
        assert_eq!(eq.tunnel_share(), 0.0);
        assert_eq!(eq.costs.fee, 0.0);
    }

    #[test]
    fn single_vot_population_matches_closed_form() {
        // With one VOT everybody is indifferent at equilibrium:
        // vot·(t_b − t_t)/60 = toll + fuel_t − fuel_b.
        let model = CorridorModel::default();
        let mut urgency = vec![0.0; 10];
        urgency[0] = 1.0;
        let pop = VotPopulation::new(vec![60.0], vec![1.0], urgency).unwrap();
        let toll = 3.0;
        let eq = money_equilibrium(&model, &pop, toll).unwrap();
        let saving = eq.split.bridge_minutes - eq.split.tunnel_minutes;
        let rhs = toll + model.tunnel_fuel() - model.bridge_fuel();
        assert_abs_diff_eq!(60.0 * saving / 60.0, rhs, epsilon = 1e-4);
    }

    #[test]
    fn optimal_toll_hits_target() {
        let model = CorridorModel::default();
        let pop = population();
        let target = model.system_optimum().tunnel_share();
        let opt = optimal_toll(&model, &pop, target).unwrap();
        assert!((opt.equilibrium.tunnel_share() - target).abs() < 1e-4);
        let cheaper = money_equilibrium(&model, &pop, opt.toll - 0.01).unwrap();
        assert!(cheaper.tunnel_share() > target);
    }

    #[test]
    fn negative_toll_rejected() {
        assert!(money_equilibrium(&CorridorModel::default(), &population(), -1.0).is_err());
    }

    #[test]
    fn urgency_means() {
        let (on, off) = route_urgency_means(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!((on, off), (2.0, 1.0));
    }
}
