//! Browser bindings: a two-level Karma game solver, the corridor under a
//! money toll, and money alignment across wage inequality.
//!
//! Every function returns a JSON string; errors come back as `{"error": ...}`.

use karma_core::equilibrium::{initial_state, solve, SolverConfig};
use karma_core::markets::population::{geometric_urgency, lognormal_strata};
use karma_core::markets::{money_equilibrium, optimal_toll, CorridorModel, SalaryTable, VotPopulation};
use karma_core::model::{CostConfig, GameConfig, TemplateSpec, TypeConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn game(avg_karma: u32, discount: f64, urgent_cost: f64) -> GameConfig {
    GameConfig {
        num_agents: 200,
        participants: 2,
        initial_avg_karma: avg_karma,
        types: vec![TypeConfig {
            name: "default".into(),
            discount,
            share: 1.0,
        }],
        urgency_levels: vec![0.0, 1.0],
        cost: CostConfig {
            lose: vec![0.0, urgent_cost],
            win: vec![],
        },
        urgency: TemplateSpec::named("iid").with("weights", vec![0.5, 0.5]),
        outcome: TemplateSpec::named("highest_bid"),
        payment: TemplateSpec::named("pay_to_peer"),
        overflow: TemplateSpec::named("uniform"),
        redistribution: TemplateSpec::named("none"),
    }
}

fn solve_game_inner(avg_karma: u32, discount: f64, lambda: f64) -> Result<Value, String> {
    let spec = game(avg_karma, discount, 1.0).build().map_err(|e| e.to_string())?;
    let config = SolverConfig {
        lambda,
        max_iterations: 5000,
        ..SolverConfig::default()
    };
    let start = initial_state(&spec, &config).map_err(|e| e.to_string())?;
    let sol = solve(&spec, &config, start).map_err(|e| e.to_string())?;
    let state = &sol.state;
    let urgent = state.num_urgencies() - 1;
    let expected_bid: Vec<f64> = (0..state.karma_len())
        .map(|k| {
            (0..state.action_len())
                .map(|a| a as f64 * state.policy[[0, urgent, k, a]])
                .sum()
        })
        .collect();
    Ok(json!({
        "converged": sol.report.converged,
        "iterations": sol.report.iterations,
        "residual": sol.report.final_residual(),
        "karma": state.karma_marginal(),
        "urgent_bid": expected_bid,
    }))
}

/// Solves the two-urgency highest-bid game with pay-to-peer; returns the
/// stationary Karma distribution and the mean bid of urgent agents by balance.
#[wasm_bindgen]
pub fn solve_game(avg_karma: u32, discount: f64, lambda: f64) -> String {
    respond(solve_game_inner(avg_karma, discount, lambda))
}

fn toll_inner(toll: f64, p: f64) -> Result<Value, String> {
    let model = CorridorModel::default();
    let urgency = geometric_urgency(p).map_err(|e| e.to_string())?;
    let pop = VotPopulation::from_table(&SalaryTable::bundled(), urgency).map_err(|e| e.to_string())?;
    let eq = money_equilibrium(&model, &pop, toll).map_err(|e| e.to_string())?;
    let best = optimal_toll(&model, &pop, model.system_optimum().tunnel_share())
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "tunnel_share": eq.tunnel_share(),
        "tunnel_minutes": eq.split.tunnel_minutes,
        "bridge_minutes": eq.split.bridge_minutes,
        "share_by_wage": eq.share_by_wage,
        "wages": pop.wages,
        "avg_urgency_tunnel": eq.avg_urgency_tunnel,
        "avg_urgency_bridge": eq.avg_urgency_bridge,
        "optimal_toll": best.toll,
        "optimal_share": best.target_share,
    }))
}

/// Route choice on the bundled corridor under a tunnel toll (dollars), with
/// urgency levels drawn from a geometric law of parameter `p`.
#[wasm_bindgen]
pub fn corridor_toll(toll: f64, p: f64) -> String {
    respond(toll_inner(toll, p))
}

fn alignment_inner(gini: f64, p: f64) -> Result<Value, String> {
    let model = CorridorModel::default();
    let urgency = geometric_urgency(p).map_err(|e| e.to_string())?;
    let mean = VotPopulation::from_table(&SalaryTable::bundled(), urgency.clone())
        .map_err(|e| e.to_string())?
        .mean_wage();
    let (wages, weights) = lognormal_strata(gini, mean, 40).map_err(|e| e.to_string())?;
    let pop = VotPopulation::new(wages, weights, urgency).map_err(|e| e.to_string())?;
    let best = optimal_toll(&model, &pop, model.system_optimum().tunnel_share())
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "gini": pop.gini(),
        "optimal_toll": best.toll,
        "avg_urgency_tunnel": best.equilibrium.avg_urgency_tunnel,
        "mean_urgency": pop.mean_urgency(),
    }))
}

/// Mean urgency of tunnel users at the optimal toll for a lognormal wage law
/// with the given Gini coefficient.
#[wasm_bindgen]
pub fn money_alignment(gini: f64, p: f64) -> String {
    respond(alignment_inner(gini, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn small_game_solves() {
        let v = parse(solve_game(1, 0.7, 50.0));
        assert_eq!(v["converged"], true, "{v}");
        let mass: f64 = v["karma"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn toll_lowers_the_tunnel_share() {
        let free = parse(corridor_toll(0.0, 0.6));
        let priced = parse(corridor_toll(20.0, 0.6));
        assert!(priced["tunnel_share"].as_f64().unwrap() < free["tunnel_share"].as_f64().unwrap());
    }

    #[test]
    fn bad_input_reports_an_error() {
        assert!(parse(corridor_toll(-1.0, 0.6))["error"].is_string());
        assert!(parse(money_alignment(0.3, 1.5))["error"].is_string());
    }

    #[test]
    fn alignment_reports_the_realized_gini() {
        let v = parse(money_alignment(0.35, 0.6));
        assert!((v["gini"].as_f64().unwrap() - 0.35).abs() < 0.02, "{v}");
    }
}
