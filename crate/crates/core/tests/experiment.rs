mod common;

use land_core::dataset::{Dataset, StepRecord};
use land_core::experiment::*;
use land_core::model::{ModelConfig, TrainConfig};
use land_core::planner::PlannerConfig;
use land_core::sim::{render_observation, Action, Observation, Oracle, RobotState};
use land_core::world::{generate_world, TerrainClass, WorldSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(episode: u64, step: u64, progress: f64, disengaged: bool) -> StepRecord {
    StepRecord {
        episode_id: episode,
        step_index: step,
        observation: Observation::filled(TerrainClass::Sidewalk),
        action: Action::new(if disengaged { 0.0 } else { 0.1 }),
        disengaged,
        progress_m: progress,
        policy_tag: "scripted".into(),
        cause: disengaged.then_some(land_core::sim::DisengagementCause::Street),
    }
}

#[test]
fn bc_exclusion_boundary() {
    let mut ds = Dataset::new();
    ds.record_step(record(0, 0, 7.9, false)).unwrap();
    ds.record_step(record(0, 1, 10.0, false)).unwrap();
    ds.record_step(record(0, 2, 11.5, true)).unwrap();
    ds.record_step(record(0, 3, 12.5, false)).unwrap();
    ds.record_step(record(1, 0, 3.0, false)).unwrap();
    assert_eq!(bc_training_indices(&ds, 2.0), vec![0, 3, 4]);
}

#[test]
fn bc_rejects_fully_excluded_data() {
    let mut ds = Dataset::new();
    ds.record_step(record(0, 0, 10.0, false)).unwrap();
    ds.record_step(record(0, 1, 10.5, false)).unwrap();
    ds.record_step(record(0, 2, 11.0, true)).unwrap();
    let err = train_bc(&ds, &ModelConfig::default(), &BcConfig::default()).unwrap_err();
    assert!(matches!(err, land_core::Error::EmptyTrainingSet(_)));
}

fn tiny_bc_config() -> ModelConfig {
    common::tiny_config(2)
}

#[test]
fn bc_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = BcParams::init(tiny_bc_config(), 4).unwrap();
    params.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let obs: Vec<Observation> = (0..5).map(|_| common::random_grid(2, &mut rng)).collect();
    let batch: Vec<(&Observation, f64)> = obs.iter().map(|o| (o, rng.gen_range(-0.4..0.4))).collect();
    let (loss, grad) = params.loss_and_gradient(&batch).unwrap();
    assert!((loss - params.loss(&batch).unwrap()).abs() < 1e-12);
    let eps = 1e-5;
    for k in 0..grad.len() {
        let mut up = params.clone();
        up.values_mut()[k] += eps;
        let mut down = params.clone();
        down.values_mut()[k] -= eps;
        let numeric = (up.loss(&batch).unwrap() - down.loss(&batch).unwrap()) / (2.0 * eps);
        assert!(common::relative_error(grad[k], numeric) < 1e-5, "coord {k}: {} vs {numeric}", grad[k]);
    }
}

#[test]
fn bc_imitates_straight_pure_pursuit() {
    let specs: Vec<WorldSpec> = (0..3)
        .map(|s| WorldSpec {
            max_curvature: 0.0,
            length_m: 80.0,
            ..WorldSpec::with_seed(500 + s)
        })
        .collect();
    let worlds = generate_worlds(&specs).unwrap();
    let scripted = PolicyKind::ScriptedPurePursuit { lookahead_m: 1.0 };
    let (report, data) = evaluate_recording(&scripted, &worlds, 200, 0, true).unwrap();
    assert_eq!(report.disengagements, 0);
    let config = BcConfig {
        steps: 200,
        batch_size: 16,
        ..BcConfig::default()
    };
    let bc = train_bc(&data, &ModelConfig::default(), &config).unwrap();
    for world in &worlds {
        for s in [5.0, 20.0, 40.0, 60.0] {
            let obs = render_observation(world, &RobotState::on_centerline(world, s));
            let a = bc.params.predict(obs.cells()).unwrap();
            assert!(a.abs() < 0.05, "predicted {a} at arc {s}");
        }
    }
}

#[test]
fn bc_checkpoint_round_trip() {
    let params = BcParams::init(ModelConfig::default(), 9).unwrap();
    let back = BcParams::from_json(&params.to_json()).unwrap();
    assert_eq!(back, params);
    assert!(land_core::model::ModelParams::from_json(&params.to_json()).is_err());
}

#[test]
fn rollout_records_reset_after_every_disengagement() {
    let world = generate_world(&WorldSpec::with_seed(1)).unwrap();
    let mut policy = Policy::new(PolicyKind::Random, 5);
    let log = rollout(
        &world,
        RobotState::on_centerline(&world, START_ARC_M),
        &mut policy,
        RolloutOptions {
            steps: 400,
            oracle: Oracle::default(),
            at_end: AtWorldEnd::Stop,
            record: true,
        },
    )
    .unwrap();
    let recs = log.dataset.records();
    assert_eq!(recs.len(), 400);
    assert!(log.tally.causes.len() > 5);
    for w in recs.windows(2) {
        if w[0].disengaged {
            assert!(!w[1].disengaged);
            assert_eq!(w[0].action.delta_heading(), 0.0);
            assert!(w[0].cause.is_some());
        }
    }
    assert_eq!(log.dataset.disengagement_count(), log.tally.causes.len());
    let final_engaged = !recs.last().unwrap().disengaged;
    assert_eq!(
        log.tally.trajectories.len(),
        log.tally.causes.len() + usize::from(final_engaged)
    );
}

#[test]
fn evaluation_is_reproducible_and_per_world() {
    let worlds = generate_worlds(&[WorldSpec::with_seed(21), WorldSpec::with_seed(22)]).unwrap();
    let a = evaluate(&PolicyKind::Random, &worlds, 150, 3).unwrap();
    let b = evaluate(&PolicyKind::Random, &worlds, 150, 3).unwrap();
    assert_eq!(a, b);
    let single = evaluate(&PolicyKind::Random, &worlds[1..], 150, 3).unwrap();
    assert_eq!(a.trajectory_distances_m[a.trajectory_distances_m.len() - single.trajectory_distances_m.len()..], single.trajectory_distances_m[..]);
    let last = a.cdf.last().unwrap();
    assert_eq!(last.fraction, 1.0);
    let max = a.trajectory_distances_m.iter().copied().fold(0.0, f64::max);
    assert_eq!(last.distance_m, max);
}

#[test]
fn report_json_round_trip() {
    let worlds = generate_worlds(&[WorldSpec::with_seed(23)]).unwrap();
    let report = evaluate(&PolicyKind::Random, &worlds, 100, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.json");
    report.save(&path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_invariants(
        tallies in prop::collection::vec(
            (prop::collection::vec(0.0f64..100.0, 0..20), 0usize..20),
            1..5,
        )
    ) {
        let tallies: Vec<RolloutTally> = tallies
            .into_iter()
            .map(|(trajectories, n)| RolloutTally {
                causes: vec![land_core::sim::DisengagementCause::Street; n.min(trajectories.len())],
                steps: trajectories.len() * 3,
                trajectories,
            })
            .collect();
        let r = EvalReport::from_tallies(&tallies);
        let total: f64 = r.trajectory_distances_m.iter().sum();
        prop_assert!((r.total_distance_m - total).abs() < 1e-9);
        prop_assert!((r.avg_distance_m - total / r.disengagements.max(1) as f64).abs() < 1e-9);
        for w in r.cdf.windows(2) {
            prop_assert!(w[0].distance_m <= w[1].distance_m && w[0].fraction < w[1].fraction);
        }
        if let Some(last) = r.cdf.last() {
            prop_assert_eq!(last.fraction, 1.0);
        }
    }
}

fn small_loop(seed: u64) -> LoopConfig {
    LoopConfig {
        phases: 2,
        steps_per_phase: 120,
        train_worlds: (1..=3)
            .map(|s| WorldSpec {
                length_m: 60.0,
                ..WorldSpec::with_seed(s)
            })
            .collect(),
        eval_worlds: vec![WorldSpec {
            length_m: 60.0,
            ..WorldSpec::with_seed(50)
        }],
        eval_steps: 40,
        model: ModelConfig {
            encoder_hidden: vec![8],
            hidden_dim: 4,
            action_embed_dim: 3,
            horizon: 4,
            ..ModelConfig::default()
        },
        planner: PlannerConfig {
            samples: 16,
            horizon: 4,
            ..PlannerConfig::default()
        },
        train: TrainConfig {
            steps: 10,
            batch_size: 8,
            ..TrainConfig::default()
        },
        scale_updates_with_data: false,
        seed,
    }
}

fn seed_data() -> Dataset {
    let worlds = generate_worlds(&[WorldSpec::with_seed(31)]).unwrap();
    let mut data = evaluate_recording(&PolicyKind::ScriptedPurePursuit { lookahead_m: 1.0 }, &worlds, 60, 0, true)
        .unwrap()
        .1;
    let random = evaluate_recording(&PolicyKind::Random, &worlds, 60, 0, true).unwrap().1;
    data.merge(&random).unwrap();
    data
}

#[test]
fn loop_accepts_off_policy_data_and_is_deterministic() {
    let initial = seed_data();
    let tags: std::collections::BTreeSet<_> = initial.iter().map(|r| r.policy_tag.clone()).collect();
    assert!(tags.contains("scripted") && tags.contains("random"));
    let a = run_land_from(&small_loop(4), &initial).unwrap();
    let b = run_land_from(&small_loop(4), &initial).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.reports.len(), 3);
    assert_eq!(a.dataset.len(), initial.len() + 240);
    assert!(a.phases[0].collected_disengagements > 0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| run_land_from(&small_loop(4), &initial)).unwrap();
    assert_eq!(a.params, c.params);
    assert_eq!(a.dataset, c.dataset);
}

#[test]
fn loop_config_validation() {
    let mut bad = small_loop(0);
    bad.eval_worlds = vec![bad.train_worlds[0].clone()];
    assert!(bad.validate().is_err());
    let mut bad = small_loop(0);
    bad.planner.horizon = 5;
    assert!(bad.validate().is_err());
    assert!(LoopConfig::benchmark().validate().is_ok());
    let json = serde_json::to_string(&LoopConfig::benchmark()).unwrap();
    let back: LoopConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, LoopConfig::benchmark());
}

#[test]
fn oracle_planner_never_disengages_on_short_worlds() {
    let worlds = generate_worlds(&[WorldSpec::with_seed(61), WorldSpec::with_seed(62)]).unwrap();
    let kind = PolicyKind::OraclePlanner {
        planner: PlannerConfig {
            samples: 256,
            ..PlannerConfig::default()
        },
        oracle: Oracle::default(),
    };
    let report = evaluate(&kind, &worlds, 150, 0).unwrap();
    assert_eq!(report.disengagements, 0);
}
