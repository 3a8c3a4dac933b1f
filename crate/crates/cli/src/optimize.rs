use std::fs;
use std::path::Path;

use anyhow::Context;
use karma_core::equilibrium::{
    initial_state, solve, write_convergence_log, write_state, Certificate, SolverConfig,
};
use karma_core::model::GameConfig;
use log::info;
use serde::{Deserialize, Serialize};

use crate::failure::{config_error, Failure};
use crate::manifest::{manifest, OutDir};
use crate::{Common, Outcome, SolverOverrides};

/// `[game]` plus an optional `[solver]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub game: GameConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Serialize)]
struct Summary {
    converged: bool,
    iterations: usize,
    final_residual: f64,
    karma_len: usize,
    action_len: usize,
    mean_karma: f64,
    value_residual: f64,
    certificate: Certificate,
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, Vec<u8>), Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| config_error(format!("{} is not UTF-8", path.display())))?;
    let parsed = toml::from_str(&text)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok((parsed, bytes))
}

pub fn apply_overrides(solver: &mut SolverConfig, overrides: &SolverOverrides) {
    if let Some(n) = overrides.max_iterations {
        solver.max_iterations = n;
    }
    if let Some(t) = overrides.tol {
        solver.convergence_tol = t;
    }
}

pub fn run(config_path: &Path, common: &Common, overrides: &SolverOverrides) -> Outcome {
    let (mut config, bytes): (OptimizeConfig, _) = read_config(config_path)?;
    apply_overrides(&mut config.solver, overrides);
    config.solver.validate()?;
    let spec = config.game.build()?;
    let mut m = manifest("optimize", Some(config_path), &bytes, common.seed);
    let mut out = OutDir::create(&common.out)?;

    let start = initial_state(&spec, &config.solver)?;
    let solution = solve(&spec, &config.solver, start)?;
    let report = &solution.report;
    info!(
        "optimize: converged={} after {} iterations (residual {:e})",
        report.converged,
        report.iterations,
        report.final_residual()
    );

    write_state(
        out.file("state.json")?,
        &solution.state,
        Some(&solution.workspace.value),
        Some(&solution.workspace.q),
    )?;
    write_convergence_log(out.file("convergence.csv")?, &report.log)?;
    let summary = Summary {
        converged: report.converged,
        iterations: report.iterations,
        final_residual: report.final_residual(),
        karma_len: report.karma_len,
        action_len: report.action_len,
        mean_karma: solution.state.mean_karma(),
        value_residual: report.value_residual,
        certificate: report.certificate.clone(),
    };
    serde_json::to_writer_pretty(out.file("summary.json")?, &summary)?;

    m.status = if report.converged { "converged" } else { "not_converged" }.into();
    out.finish(m)?;
    if report.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(anyhow::anyhow!(
            "not converged after {} iterations (residual {:e}); partial state saved to {}",
            report.iterations,
            report.final_residual(),
            common.out.join("state.json").display()
        )))
    }
}
