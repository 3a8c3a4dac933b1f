use std::io::Write;
use std::path::Path;

use karma_core::markets::tables::{
    write_calibration, write_cost_benefit, write_gini_sweep, write_prices, write_route_urgency,
    write_shares_by_urgency, write_shares_by_wage, write_threshold_curve, write_toll_curve,
};
use karma_core::markets::{
    alignment_crossover, calibrate_corridor, gini_sweep, price_scenario, CaseStudyConfig,
    ScenarioPricing,
};
use log::info;

use crate::failure::{config_error, Failure};
use crate::manifest::{manifest, OutDir};
use crate::optimize::{apply_overrides, read_config};
use crate::{Common, Outcome, SolverOverrides, Which};

pub fn run(
    which: Which,
    config_path: Option<&Path>,
    scenario: Option<&str>,
    common: &Common,
    overrides: &SolverOverrides,
) -> Outcome {
    let (mut config, bytes) = match config_path {
        Some(p) => read_config::<CaseStudyConfig>(p)?,
        None => {
            let c = CaseStudyConfig::default();
            let text = toml::to_string(&c).map_err(|e| Failure::Runtime(e.into()))?;
            (c, text.into_bytes())
        }
    };
    apply_overrides(&mut config.karma.solver, overrides);
    if let Some(name) = scenario {
        let known: Vec<String> = config.scenarios.iter().map(|s| s.name.clone()).collect();
        config.scenarios.retain(|s| s.name == name);
        if config.scenarios.is_empty() {
            return Err(config_error(format!(
                "unknown scenario `{name}` (known: {})",
                known.join(", ")
            )));
        }
    }
    config.validate()?;
    let table = config.salary_table()?;

    let command = match which {
        Which::Calibrate => "casestudy calibrate",
        Which::Pricing => "casestudy pricing",
        Which::GiniSweep => "casestudy gini-sweep",
        Which::All => "casestudy all",
    };
    let mut m = manifest(command, config_path, &bytes, common.seed);
    let mut out = OutDir::create(&common.out)?;

    if matches!(which, Which::Calibrate | Which::All) {
        let cal = calibrate_corridor(&config.corridor, &config.anchors, config.calibration_tolerance)?;
        info!("calibrate: worst anchor residual {:.4}%", 100.0 * cal.worst());
        write_calibration(out.file("calibration.csv")?, &cal)?;
        let text = toml::to_string(&cal.model).map_err(|e| Failure::Runtime(e.into()))?;
        out.file("calibrated_corridor.toml")?.write_all(text.as_bytes())?;
    }

    let runs: Vec<ScenarioPricing> = if matches!(which, Which::Pricing | Which::GiniSweep | Which::All) {
        config
            .scenarios
            .iter()
            .map(|s| {
                info!("pricing: scenario {}", s.name);
                price_scenario(&config, &config.corridor, &table, s, common.threads)
            })
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    if matches!(which, Which::Pricing | Which::All) {
        let wages = table.hourly_wages();
        write_prices(out.file("prices.csv")?, &runs)?;
        write_toll_curve(out.file("toll_curve.csv")?, &runs)?;
        write_threshold_curve(out.file("threshold_curve.csv")?, &runs)?;
        write_shares_by_wage(out.file("shares_by_wage.csv")?, &runs, &wages, &table.weights)?;
        write_shares_by_urgency(out.file("shares_by_urgency.csv")?, &runs)?;
        write_route_urgency(out.file("route_urgency.csv")?, &runs)?;
        write_cost_benefit(out.file("cost_benefit.csv")?, &runs)?;
    }

    if matches!(which, Which::GiniSweep | Which::All) {
        let mean_wage = karma_core::markets::VotPopulation::from_table(
            &table,
            runs[0].urgency_weights.clone(),
        )?
        .mean_wage();
        let mut points = Vec::new();
        let mut crossovers = Vec::new();
        for r in &runs {
            let crossing = r.karma_crossing.as_ref().ok_or_else(|| {
                Failure::Runtime(anyhow::anyhow!(
                    "scenario {}: Karma share never crosses the optimum on the threshold grid",
                    r.scenario.name
                ))
            })?;
            let pts = gini_sweep(
                &config,
                &config.corridor,
                mean_wage,
                &r.scenario,
                crossing.avg_urgency_tunnel,
            )?;
            crossovers.push((r.scenario.name.clone(), alignment_crossover(&pts)));
            points.extend(pts);
        }
        write_gini_sweep(out.file("gini_sweep.csv")?, &points)?;
        let mut f = out.file("gini_crossover.csv")?;
        writeln!(f, "scenario,crossover_gini")?;
        for (name, c) in crossovers {
            writeln!(f, "{name},{}", c.map_or(String::new(), |v| v.to_string()))?;
        }
    }

    m.status = "ok".into();
    out.finish(m)
}
