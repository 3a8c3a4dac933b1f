use ndarray::{Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{
    build_initial_policy, GameConfig, PolicyInit, WIN,
};

fn game(payment: &str, outcome: &str, avg: u32) -> GameSpec {
    toml::from_str::<GameConfig>(&format!(
        r#"
        num_agents = 200
        initial_avg_karma = {avg}
        urgency_levels = [0.0, 1.0]
        [[types]]
        discount = 0.8
        [cost]
        lose = [0.0, 3.0]
        [urgency]
        template = "iid"
        weights = [0.5, 0.5]
        [outcome]
        {outcome}
        [payment]
        template = "{payment}"
        "#
    ))
    .unwrap()
    .build()
    .unwrap()
}

fn peer_game() -> GameSpec {
    game("pay_to_peer", "template = \"highest_bid\"", 6)
}

fn state_with(policy: Array4<f64>, d: Array3<f64>) -> SocialState {
    SocialState::new(policy, d).unwrap()
}

fn random_policy(rng: &mut ChaCha8Rng, nk: usize, na: usize) -> Array4<f64> {
    let mut pi = Array4::zeros((1, 2, nk, na));
    for u in 0..2 {
        for k in 0..nk {
            let top = k.min(na - 1);
            let w: Vec<f64> = (0..=top).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = w.iter().sum();
            for a in 0..=top {
                pi[[0, u, k, a]] = w[a] / s;
            }
        }
    }
    pi
}

fn point_mass(nk: usize, u: usize, k: usize) -> Array3<f64> {
    let mut d = Array3::zeros((1, 2, nk));
    d[[0, u, k]] = 1.0;
    d
}

#[test]
fn equal_endowment() {
    let spec = peer_game();
    let pi = build_initial_policy(PolicyInit::Even, 1, 2, 25, 7).unwrap();
    let mut d = Array3::zeros((1, 2, 25));
    d[[0, 0, 3]] = 0.5;
    d[[0, 1, 9]] = 0.5;
    let pop = init_population(&spec, &state_with(pi, d), InitMode::EqualEndowment, 200, 1).unwrap();
    assert!(pop.agents.iter().all(|a| a.karma == 6));
    assert_eq!(pop.overflow, 0);
    assert_eq!(pop.total_karma(), 1200);
}

#[test]
fn point_mass_population_is_identical() {
    let spec = peer_game();
    let pi = build_initial_policy(PolicyInit::Even, 1, 2, 25, 7).unwrap();
    let pop = init_population(
        &spec,
        &state_with(pi, point_mass(25, 1, 6)),
        InitMode::FromEquilibrium,
        50,
        1,
    )
    .unwrap();
    assert!(pop.agents.iter().all(|a| a.urgency == 1 && a.karma == 6));
}

#[test]
fn sampled_population_matches_distribution() {
    let spec = peer_game();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pi = random_policy(&mut rng, 25, 7);
    // Geometric Karma profile on 0..=10; expected sampling TV ≈ 0.015.
    let mut d = Array3::from_shape_fn((1, 2, 25), |(_, _, k)| {
        if k <= 10 { 0.75f64.powi(k as i32) } else { 0.0 }
    });
    let s = d.sum();
    d /= s;
    let state = state_with(pi, d.clone());
    let pop = init_population(&spec, &state, InitMode::FromEquilibrium, 10_000, 9).unwrap();
    let mut counts = Array3::<f64>::zeros((1, 2, 25));
    for a in &pop.agents {
        counts[[0, a.urgency, a.karma as usize]] += 1.0 / 10_000.0;
    }
    let tv: f64 = 0.5 * counts.iter().zip(d.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.02, "tv {tv}");
    let mean: f64 = d.indexed_iter().map(|((_, _, k), v)| k as f64 * v).sum();
    let var: f64 = d.indexed_iter().map(|((_, _, k), v)| (k as f64 - mean).powi(2) * v).sum();
    assert!((pop.mean_karma() - mean).abs() < 3.0 * var.sqrt() / 100.0);
}

#[test]
fn scripted_bids_pay_peer() {
    let spec = peer_game();
    // bid(k) = k
    let mut pi = Array4::zeros((1, 2, 10, 10));
    for u in 0..2 {
        for k in 0..10 {
            pi[[0, u, k, k]] = 1.0;
        }
    }
    let mut pop = init_population(
        &spec,
        &state_with(pi.clone(), point_mass(10, 1, 3)),
        InitMode::FromEquilibrium,
        2,
        1,
    )
    .unwrap();
    pop.agents[1].karma = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rec = execute_interaction(&mut pop, &[0, 1], &pi, &spec.logic(), &spec.cost, &mut rng).unwrap();
    assert_eq!(rec.bids, vec![3, 1]);
    assert_eq!(rec.outcome[0], WIN);
    assert_eq!(pop.karma(), vec![0, 4]);
    assert_eq!(pop.agents[1].cumulative_cost, 3.0);
    assert_eq!(pop.agents[0].cumulative_cost, 0.0);
    assert!(pop.agents.iter().all(|a| a.encounters == 1));
}

#[test]
fn zero_bids_move_nothing() {
    let spec = peer_game();
    let pi = build_initial_policy(PolicyInit::Bottom, 1, 2, 10, 5).unwrap();
    let mut pop = init_population(
        &spec,
        &state_with(pi.clone(), point_mass(10, 0, 5)),
        InitMode::FromEquilibrium,
        2,
        1,
    )
    .unwrap();
    let mut wins = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..400 {
        let rec = execute_interaction(&mut pop, &[0, 1], &pi, &spec.logic(), &spec.cost, &mut rng).unwrap();
        wins += usize::from(rec.outcome[0] == WIN);
        assert_eq!(pop.karma(), vec![5, 5]);
    }
    assert!((150..250).contains(&wins), "coin looks biased: {wins}");
}

#[test]
fn duplicate_participants_rejected() {
    let spec = peer_game();
    let pi = build_initial_policy(PolicyInit::Even, 1, 2, 10, 5).unwrap();
    let mut pop = init_population(
        &spec,
        &state_with(pi.clone(), point_mass(10, 0, 5)),
        InitMode::FromEquilibrium,
        5,
        1,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let err = execute_interaction(&mut pop, &[3, 3], &pi, &spec.logic(), &spec.cost, &mut rng);
    assert!(matches!(err, Err(Error::Contract(_))));
}

fn uniform_run(seed: u64, epochs: u64, per_epoch: usize) -> (Population, Trace, Array4<f64>) {
    let spec = peer_game();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = random_policy(&mut rng, 25, 8);
    let d = Array3::from_elem((1, 2, 25), 1.0 / 50.0);
    let pop = init_population(&spec, &state_with(pi.clone(), d), InitMode::EqualEndowment, 40, seed).unwrap();
    let cfg = SimConfig {
        epochs,
        interactions_per_epoch: per_epoch,
        snapshot_every: 10,
        record_interactions: true,
    };
    let trace = run(pop.clone(), &pi, &spec, &cfg, &ParticipantSource::Uniform).unwrap();
    (pop, trace, pi)
}

#[test]
fn idle_epochs_only_advance_the_counter() {
    let (pop, trace, _) = uniform_run(1, 25, 0);
    let mut expected = pop.clone();
    expected.epoch = 25;
    assert_eq!(trace.population, expected);
}

#[test]
fn run_accounting() {
    let (pop, trace, _) = uniform_run(3, 500, 3);
    assert_eq!(trace.population.ledger(), pop.ledger());
    assert!(trace.summaries.iter().all(|s| s.total_karma + s.overflow == pop.ledger()));
    let encounters: u64 = trace.population.agents.iter().map(|a| a.encounters).sum();
    assert_eq!(encounters, 500 * 3 * 2);
    // first + every 10th epoch (the last one included)
    assert_eq!(trace.snapshots.len(), 1 + 50);
    assert_eq!(trace.snapshots.last().unwrap().epoch, 500);
    for r in &trace.interactions {
        for j in 0..2 {
            let after = (i64::from(r.karma_before[j]) + r.deltas[j]) as Karma;
            let k = r.karma_before[j];
            let allowed = [k, k - r.bids[j], k + r.bids[1 - j]];
            assert!(allowed.contains(&after), "{r:?}");
        }
    }
    let total: u64 = trace.transitions.values().sum();
    assert_eq!(total, 500 * 3 * 2);
}

#[test]
fn runs_are_deterministic() {
    let (_, a, _) = uniform_run(11, 300, 2);
    let (_, b, _) = uniform_run(11, 300, 2);
    assert_eq!(a, b);
    let (_, c, _) = uniform_run(12, 300, 2);
    assert_ne!(a.population.digest(), c.population.digest());
}

#[test]
fn society_pot_collects_winning_bids() {
    let spec = game(
        "pay_to_society",
        "template = \"threshold_auction\"\nthreshold = 2",
        6,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pi = random_policy(&mut rng, 25, 8);
    let d = Array3::from_elem((1, 2, 25), 1.0 / 50.0);
    let mut pop = init_population(&spec, &state_with(pi.clone(), d), InitMode::EqualEndowment, 30, 5).unwrap();
    let mut paid = 0i64;
    for i in 0..10 {
        let rec = execute_interaction(
            &mut pop,
            &[2 * i, 2 * i + 1],
            &pi,
            &spec.logic(),
            &spec.cost,
            &mut rng,
        )
        .unwrap();
        paid += (0..2)
            .filter(|j| rec.outcome[*j] == WIN)
            .map(|j| i64::from(rec.bids[j]))
            .sum::<i64>();
    }
    assert_eq!(pop.overflow as i64, paid);
    assert_eq!(pop.ledger(), 30 * 6);
    // Closing the epoch empties the pot uniformly.
    let trace = run(
        pop,
        &pi,
        &spec,
        &SimConfig {
            epochs: 1,
            interactions_per_epoch: 0,
            ..SimConfig::default()
        },
        &ParticipantSource::Uniform,
    )
    .unwrap();
    assert_eq!(trace.population.overflow, 0);
    assert_eq!(trace.population.total_karma(), 180);
}

#[test]
fn external_participants() {
    let spec = peer_game();
    let pi = build_initial_policy(PolicyInit::Even, 1, 2, 25, 7).unwrap();
    let d = Array3::from_elem((1, 2, 25), 1.0 / 50.0);
    let pop = init_population(&spec, &state_with(pi.clone(), d), InitMode::EqualEndowment, 4, 5).unwrap();
    let text = "# epoch 1\n0 1\n2,3\n\n1 3 # trailing\n";
    let list = read_participant_list(text.as_bytes(), 2).unwrap();
    assert_eq!(list, vec![vec![0, 1], vec![2, 3], vec![1, 3]]);
    let cfg = SimConfig {
        epochs: 3,
        interactions_per_epoch: 1,
        ..SimConfig::default()
    };
    let trace = run(pop.clone(), &pi, &spec, &cfg, &ParticipantSource::External(list)).unwrap();
    let enc: Vec<u64> = trace.population.agents.iter().map(|a| a.encounters).collect();
    assert_eq!(enc, vec![1, 2, 1, 2]);

    assert!(matches!(
        read_participant_list("0 1 2\n".as_bytes(), 2),
        Err(Error::Contract(_))
    ));
    let bad = ParticipantSource::External(vec![vec![0, 1, 2]; 3]);
    assert!(matches!(run(pop, &pi, &spec, &cfg, &bad), Err(Error::Contract(_))));
}

#[test]
fn trace_tables_have_headers() {
    let (_, trace, _) = uniform_run(2, 20, 1);
    let mut buf = Vec::new();
    write_epoch_summaries(&mut buf, &trace.summaries).unwrap();
    write_agents(&mut buf, &trace.population).unwrap();
    write_transitions(&mut buf, &trace.transitions).unwrap();
    write_interactions(&mut buf, &trace.interactions).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epoch,interactions,"));
    assert!(text.contains("\nagent,type,urgency,karma,"));
    assert!(text.contains("\nkarma_before,karma_after,count\n"));
    assert!(text.contains("\nepoch,participants,karma_before,bids,"));
}

#[test]
fn statistics_helpers() {
    assert_eq!(karma_histogram(&[0, 2, 2, 1]), vec![0.25, 0.25, 0.5]);
    assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 0.0);
    assert_eq!(skewness(&[1.0, 1.0]), 0.0);
    assert!((total_variation(&[0.5, 0.5], &[1.0]) - 0.5).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn karma_is_conserved(seed in any::<u64>(), society in any::<bool>(), n in 2usize..30, per_epoch in 0usize..4) {
        let spec = if society {
            game("pay_to_society", "template = \"threshold_auction\"\nthreshold = 1", 3)
        } else {
            game("pay_to_peer", "template = \"highest_bid\"", 3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = random_policy(&mut rng, 13, 6);
        let d = Array3::from_elem((1, 2, 13), 1.0 / 26.0);
        let pop = init_population(&spec, &state_with(pi.clone(), d), InitMode::FromEquilibrium, n, seed).unwrap();
        let start = pop.ledger();
        let cfg = SimConfig { epochs: 40, interactions_per_epoch: per_epoch, snapshot_every: 0, record_interactions: false };
        let trace = run(pop, &pi, &spec, &cfg, &ParticipantSource::Uniform).unwrap();
        prop_assert_eq!(trace.population.ledger(), start);
        for s in &trace.summaries {
            prop_assert_eq!(s.total_karma + s.overflow, start);
        }
    }
}

#[test]
fn small_population_mean_is_pinned() {
    let spec = peer_game();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pi = random_policy(&mut rng, 25, 7);
    let mut d = Array3::from_shape_fn((1, 2, 25), |(_, _, k)| 0.9f64.powi(k as i32));
    let s = d.sum();
    d /= s;
    let mean: f64 = d.indexed_iter().map(|((_, _, k), v)| k as f64 * v).sum();
    for seed in 0..20 {
        let pop = init_population(&spec, &state_with(pi.clone(), d.clone()), InitMode::FromEquilibrium, 200, seed)
            .unwrap();
        assert!((pop.mean_karma() - mean).abs() <= 2.0 / 200f64.sqrt(), "seed {seed}");
    }
}
