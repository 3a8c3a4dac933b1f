//! `karma`: solve Karma games, simulate them, and run the tolling case study.
//!
//! Exit codes:
//! - 0: success
//! - 2: usage or configuration error
//! - 3: the equilibrium solver hit its iteration limit (partial state saved)
//! - 4: runtime failure (divergence, calibration miss, I/O)

mod casestudy;
mod failure;
mod manifest;
mod optimize;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "KARMA_LOG";

#[derive(Parser, Debug)]
#[command(name = "karma", version, about = "Karma resource-allocation games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Root seed; every random stream is derived from it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for independent sweep points.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverOverrides {
    /// Override the solver's iteration limit.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Override the solver's convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a stationary Nash equilibrium.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverOverrides,
    },
    /// Simulate a population under a solved policy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// `state.json` written by `optimize`.
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Two-route congestion-pricing case study.
    Casestudy {
        which: Which,
        /// Case-study TOML; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict pricing and sweeps to one named scenario.
        #[arg(long)]
        scenario: Option<String>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverOverrides,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Calibrate,
    Pricing,
    GiniSweep,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize {
            config,
            common,
            solver,
        } => optimize::run(&config, &common, &solver),
        Command::Simulate {
            config,
            policy,
            common,
        } => simulate::run(&config, &policy, &common),
        Command::Casestudy {
            which,
            config,
            scenario,
            common,
            solver,
        } => casestudy::run(which, config.as_deref(), scenario.as_deref(), &common, &solver),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("karma: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

pub type Outcome = Result<(), Failure>;
