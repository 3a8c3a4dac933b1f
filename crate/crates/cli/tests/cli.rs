use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use karma_core::equilibrium::{initial_state, read_state, solve, write_state};
use serde_json::Value;
use tempfile::TempDir;

fn karma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_karma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn run_optimize(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["optimize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    karma(&args)
}

#[test]
fn small_game_converges_with_exit_zero() {
    let dir = TempDir::new().unwrap();
    let out = run_optimize(&config("small.toml"), dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["certificate"]["argmax_disagreements"], 0);
    assert!((summary["mean_karma"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["status"], "converged");
    assert_eq!(manifest["command"], "optimize");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let mut outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    outputs.sort_unstable();
    assert_eq!(outputs, ["convergence.csv", "state.json", "summary.json"]);
    let log = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(log.starts_with("iteration,residual"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("small.toml"))
        .unwrap()
        .replace("initial_avg_karma", "initial_avg_karmaa");
    fs::write(&cfg, text).unwrap();
    let out = run_optimize(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("initial_avg_karmaa"), "{}", stderr(&out));
}

#[test]
fn out_of_range_value_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("small.toml"))
        .unwrap()
        .replace("discount = 0.7", "discount = 1.5");
    fs::write(&cfg, text).unwrap();
    let out = run_optimize(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("discount"), "{}", stderr(&out));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = run_optimize(&dir.path().join("nope.toml"), dir.path(), &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn one_iteration_exits_not_converged_with_state() {
    let dir = TempDir::new().unwrap();
    let out = run_optimize(&config("small.toml"), dir.path(), &["--max-iterations", "1"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("not converged"));
    let file = fs::File::open(dir.path().join("state.json")).unwrap();
    let (state, _) = read_state(file).unwrap();
    assert!((state.total_mass() - 1.0).abs() < 1e-9);
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "not_converged");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = karma(&["frobnicate"]);
    assert_eq!(code(&out), 2);
    let out = karma(&["casestudy", "everything", "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[derive(serde::Deserialize)]
struct OptimizeFile {
    game: karma_core::model::GameConfig,
    solver: karma_core::equilibrium::SolverConfig,
}

#[test]
fn fixture_run_matches_the_library_solver() {
    let cfg_path = config("fixture.toml");
    let dir = TempDir::new().unwrap();
    let out = run_optimize(&cfg_path, dir.path(), &[]);

    let cfg: OptimizeFile = toml::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    let spec = cfg.game.build().unwrap();
    let sol = solve(&spec, &cfg.solver, initial_state(&spec, &cfg.solver).unwrap()).unwrap();
    let expected = if sol.report.converged { 0 } else { 3 };
    assert_eq!(code(&out), expected, "{}", stderr(&out));

    let mut buf = Vec::new();
    write_state(&mut buf, &sol.state, Some(&sol.workspace.value), Some(&sol.workspace.q)).unwrap();
    assert_eq!(fs::read(dir.path().join("state.json")).unwrap(), buf);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["iterations"].as_u64().unwrap() as usize, sol.report.iterations);
}

fn simulate(cfg: &Path, policy: &Path, out: &Path, seed: &str) -> Output {
    karma(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        seed,
    ])
}

fn solved_small(dir: &Path) -> PathBuf {
    let out = run_optimize(&config("small.toml"), &dir.join("policy"), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("policy/state.json")
}

fn sim_config(dir: &Path, epochs: u64) -> PathBuf {
    let text = fs::read_to_string(config("small.toml")).unwrap();
    let game = text.split("[solver]").next().unwrap();
    let path = dir.join(format!("sim{epochs}.toml"));
    fs::write(
        &path,
        format!("{game}\n[simulation]\nepochs = {epochs}\nrecord_interactions = true\n"),
    )
    .unwrap();
    path
}

const DATA_FILES: [&str; 6] = [
    "epochs.csv",
    "agents.csv",
    "transitions.csv",
    "histogram.csv",
    "interactions.csv",
    "summary.json",
];

#[test]
fn simulation_is_reproducible_from_the_seed() {
    let dir = TempDir::new().unwrap();
    let policy = solved_small(dir.path());
    let cfg = sim_config(dir.path(), 500);
    for (name, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out = simulate(&cfg, &policy, &dir.path().join(name), seed);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in DATA_FILES {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let digest = |name: &str| json(&dir.path().join(name).join("summary.json"))["final_digest"].clone();
    assert_ne!(digest("a"), digest("c"));
    let epochs = fs::read_to_string(dir.path().join("a/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 501);
    let ledgers: Vec<u64> = csv_rows(&dir.path().join("a/epochs.csv"))
        .iter()
        .map(|r| r[2].parse::<u64>().unwrap() + r[3].parse::<u64>().unwrap())
        .collect();
    assert!(ledgers.windows(2).all(|w| w[0] == w[1]));
    let summary = json(&dir.path().join("a/summary.json"));
    assert_eq!(summary["total_karma"].as_u64().unwrap() + summary["overflow"].as_u64().unwrap(), ledgers[0]);
}

#[test]
fn zero_epochs_gives_an_empty_trace() {
    let dir = TempDir::new().unwrap();
    let policy = solved_small(dir.path());
    let cfg = sim_config(dir.path(), 0);
    let out = simulate(&cfg, &policy, &dir.path().join("run"), "1");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let epochs = fs::read_to_string(dir.path().join("run/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 1);
    assert_eq!(json(&dir.path().join("run/summary.json"))["epochs"], 0);
}

#[test]
fn simulate_rejects_a_missing_policy() {
    let dir = TempDir::new().unwrap();
    let cfg = sim_config(dir.path(), 10);
    let out = simulate(&cfg, &dir.path().join("none.json"), &dir.path().join("run"), "1");
    assert_eq!(code(&out), 2);
}

fn casestudy(which: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["casestudy", which, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    karma(&args)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn calibrate_meets_every_anchor_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        let out = casestudy("calibrate", &dir.path().join(name), &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let rows = csv_rows(&dir.path().join("a/calibration.csv"));
    let anchors: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "anchor")
        .map(|r| r[4].parse().unwrap())
        .collect();
    assert_eq!(anchors.len(), 4);
    assert!(anchors.iter().all(|r| r.abs() < 0.01), "{anchors:?}");
    for f in ["calibration.csv", "calibrated_corridor.toml"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = casestudy("pricing", dir.path(), &["--scenario", "p=0.9"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("p=0.6"));
}

#[test]
fn pricing_reports_the_system_optimal_share() {
    let dir = TempDir::new().unwrap();
    let out = casestudy("pricing", dir.path(), &["--scenario", "p=0.6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&dir.path().join("cost_benefit.csv"));
    let priced: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] == "money" || r[1] == "karma")
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(priced.len(), 2);
    for share in priced {
        assert!((share - 0.3983).abs() < 0.005, "share {share}");
    }
    for f in [
        "prices.csv",
        "toll_curve.csv",
        "threshold_curve.csv",
        "shares_by_wage.csv",
        "shares_by_urgency.csv",
        "route_urgency.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn shipped_casestudy_config_matches_the_defaults() {
    let text = fs::read_to_string(config("casestudy.toml")).unwrap();
    let parsed: karma_core::markets::CaseStudyConfig = toml::from_str(&text).unwrap();
    assert_eq!(parsed, karma_core::markets::CaseStudyConfig::default());
}
