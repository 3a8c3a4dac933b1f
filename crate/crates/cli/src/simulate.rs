use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use karma_core::equilibrium::read_state;
use karma_core::model::GameConfig;
use karma_core::sim::{
    init_population, karma_histogram, read_participant_list, run as run_sim, skewness,
    total_variation, write_agents, write_epoch_summaries, write_interactions, write_transitions,
    InitMode, ParticipantSource, SimConfig,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::failure::{config_error, Failure};
use crate::manifest::{manifest, OutDir};
use crate::optimize::read_config;
use crate::{Common, Outcome};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub game: GameConfig,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub init: Option<InitMode>,
    /// Line-oriented participant tuples; relative to the config file.
    #[serde(default)]
    pub participants_file: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Summary {
    epochs: u64,
    agents: usize,
    total_karma: u64,
    overflow: u64,
    final_digest: String,
    mean_encounters: f64,
    cost_skewness: f64,
    karma_tv_to_equilibrium: f64,
}

fn equilibrium_marginal(state: &karma_core::model::SocialState) -> Vec<f64> {
    let mass = state.total_mass();
    state.karma_marginal().into_iter().map(|v| v / mass).collect()
}

pub fn run(config_path: &Path, policy_path: &Path, common: &Common) -> Outcome {
    let (config, bytes): (SimulateConfig, _) = read_config(config_path)?;
    let spec = config.game.build()?;
    let file = fs::File::open(policy_path)
        .map_err(|e| config_error(format!("policy {}: {e}", policy_path.display())))?;
    let (state, _) = read_state(BufReader::new(file))
        .map_err(|e| config_error(format!("policy {}: {e}", policy_path.display())))?;
    let source = match &config.participants_file {
        None => ParticipantSource::Uniform,
        Some(p) => {
            let path = config_path.parent().unwrap_or(Path::new(".")).join(p);
            let f = fs::File::open(&path)
                .map_err(|e| config_error(format!("participants_file {}: {e}", path.display())))?;
            ParticipantSource::External(read_participant_list(BufReader::new(f), spec.participants)?)
        }
    };
    let mode = config.init.unwrap_or(InitMode::FromEquilibrium);
    let population = init_population(&spec, &state, mode, spec.num_agents, common.seed)?;

    let mut m = manifest("simulate", Some(config_path), &bytes, common.seed);
    let mut out = OutDir::create(&common.out)?;
    let target = equilibrium_marginal(&state);

    if config.simulation.epochs == 0 {
        info!("simulate: 0 epochs, writing empty trace");
        write_epoch_summaries(out.file("epochs.csv")?, &[])?;
        write_agents(out.file("agents.csv")?, &population)?;
        write_transitions(out.file("transitions.csv")?, &Default::default())?;
        write_histogram(out.file("histogram.csv")?, &karma_histogram(&population.karma()), &target)?;
        let summary = Summary {
            epochs: 0,
            agents: population.len(),
            total_karma: population.total_karma(),
            overflow: population.overflow,
            final_digest: format!("{:016x}", population.digest()),
            mean_encounters: 0.0,
            cost_skewness: 0.0,
            karma_tv_to_equilibrium: total_variation(&karma_histogram(&population.karma()), &target),
        };
        serde_json::to_writer_pretty(out.file("summary.json")?, &summary)?;
        m.status = "ok".into();
        return out.finish(m);
    }

    let trace = run_sim(population, &state.policy, &spec, &config.simulation, &source)?;
    let hist = trace.karma_histogram();
    write_epoch_summaries(out.file("epochs.csv")?, &trace.summaries)?;
    write_agents(out.file("agents.csv")?, &trace.population)?;
    write_transitions(out.file("transitions.csv")?, &trace.transitions)?;
    write_histogram(out.file("histogram.csv")?, &hist, &target)?;
    if config.simulation.record_interactions {
        write_interactions(out.file("interactions.csv")?, &trace.interactions)?;
    }
    let summary = Summary {
        epochs: config.simulation.epochs,
        agents: trace.population.len(),
        total_karma: trace.population.total_karma(),
        overflow: trace.population.overflow,
        final_digest: format!("{:016x}", trace.population.digest()),
        mean_encounters: trace.mean_encounters(),
        cost_skewness: skewness(&trace.cumulative_costs()),
        karma_tv_to_equilibrium: total_variation(&hist, &target),
    };
    info!(
        "simulate: {} epochs, TV to equilibrium {:.4}",
        summary.epochs, summary.karma_tv_to_equilibrium
    );
    serde_json::to_writer_pretty(out.file("summary.json")?, &summary)?;
    m.status = "ok".into();
    out.finish(m)
}

fn write_histogram<W: Write>(mut out: W, simulated: &[f64], equilibrium: &[f64]) -> Result<(), Failure> {
    writeln!(out, "karma,simulated,equilibrium")?;
    for k in 0..simulated.len().max(equilibrium.len()) {
        let s = simulated.get(k).copied().unwrap_or(0.0);
        let e = equilibrium.get(k).copied().unwrap_or(0.0);
        writeln!(out, "{k},{s},{e}")?;
    }
    Ok(())
}
