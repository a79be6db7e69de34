use std::path::Path;
use std::process::{Command, Output};

use land_cli::manifest::{file_hash, RunManifest};
use land_core::dataset::Dataset;
use land_core::experiment::{EvalReport, LoopConfig};
use land_core::model::{ModelConfig, TrainConfig};
use land_core::planner::PlannerConfig;
use land_core::world::WorldSpec;

fn land(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_land")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = land(args);
    assert!(
        out.status.success(),
        "land {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        encoder_hidden: vec![8],
        hidden_dim: 4,
        action_embed_dim: 3,
        horizon: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = land(&["evaluate", "--out", s(dir.path()), "--world-seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
    assert_eq!(land(&["collect", "--bogus"]).status.code(), Some(1));
    assert_eq!(land(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(land(&["--help"]).status.code(), Some(0));
    // A learned policy without a checkpoint is a usage error too.
    let out = land(&["collect", "--out", s(dir.path()), "--policy", "land", "--world-seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = land(&["evaluate", "--model", s(&missing), "--out", s(dir.path()), "--world-seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_worlds_writes_documents_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-worlds", "--out", s(dir.path()), "--seeds", "4,5"]);
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "gen-worlds");
    assert_eq!(manifest.seeds, vec![4, 5]);
    assert_eq!(manifest.outputs.len(), 2);
    for artifact in &manifest.outputs {
        assert_eq!(artifact.hash, file_hash(&artifact.path).unwrap());
    }
    let text = std::fs::read_to_string(dir.path().join("world_4.json")).unwrap();
    let world = land_core::world::World::from_json(&text).unwrap();
    assert_eq!(world.spec, WorldSpec::with_seed(4));
}

#[test]
fn collect_train_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let worlds = root.join("worlds");
    ok(&["gen-worlds", "--out", s(&worlds), "--seeds", "11"]);
    let world = worlds.join("world_11.json");
    let random = root.join("random");
    ok(&["collect", "--out", s(&random), "--policy", "random", "--world", s(&world), "--steps", "150", "--seed", "2"]);
    let data = Dataset::load(random.join("dataset.ndjson")).unwrap();
    assert!(data.disengagement_count() > 0);
    assert!(data.iter().all(|r| r.policy_tag == "random"));

    let model_cfg = root.join("model_cfg.json");
    std::fs::write(&model_cfg, serde_json::to_string(&small_model()).unwrap()).unwrap();
    let train_cfg = root.join("train_cfg.json");
    let train = TrainConfig {
        steps: 20,
        batch_size: 8,
        ..TrainConfig::default()
    };
    std::fs::write(&train_cfg, serde_json::to_string(&train).unwrap()).unwrap();
    let model_dir = root.join("model");
    ok(&[
        "train", "--data", s(&random.join("dataset.ndjson")), "--out", s(&model_dir),
        "--config", s(&train_cfg), "--model-config", s(&model_cfg),
    ]);

    let planner_cfg = root.join("planner.json");
    let planner = PlannerConfig {
        samples: 16,
        horizon: 4,
        ..PlannerConfig::default()
    };
    std::fs::write(&planner_cfg, serde_json::to_string(&planner).unwrap()).unwrap();
    let eval_dir = root.join("eval");
    ok(&[
        "evaluate", "--model", s(&model_dir.join("model.json")), "--out", s(&eval_dir),
        "--world-seed", "12", "--steps", "40", "--planner", s(&planner_cfg),
    ]);
    let report = EvalReport::load(eval_dir.join("report.json")).unwrap();
    assert!(report.steps > 0);

    // Unknown config keys are rejected.
    let bad = root.join("bad.json");
    std::fs::write(&bad, r#"{"steps": 1, "batch_size": 2, "learning_rate": 0.001, "seed": 0, "lr": 1}"#).unwrap();
    let out = land(&["train", "--data", s(&random.join("dataset.ndjson")), "--out", s(&root.join("x")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    let bc_dir = root.join("bc");
    let scripted = root.join("scripted");
    ok(&["collect", "--out", s(&scripted), "--policy", "scripted", "--world", s(&world), "--steps", "100"]);
    ok(&[
        "train", "--bc", "--data", s(&scripted.join("dataset.ndjson")), "--out", s(&bc_dir),
        "--model-config", s(&model_cfg),
    ]);
    ok(&["evaluate", "--model", s(&bc_dir.join("model.json")), "--out", s(&bc_dir), "--world-seed", "12", "--steps", "40"]);

    ok(&["plot", "--report", s(&eval_dir.join("report.json"))]);
    let svg = std::fs::read_to_string(eval_dir.join("cdf.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let last = report.cdf.last().unwrap();
    assert_eq!(last.fraction, 1.0);
    let frame = land_cli::plot::Frame {
        x_min: 0.0,
        x_max: last.distance_m.max(1.0),
        y_min: 0.0,
        y_max: 1.0,
    };
    assert!(svg.contains(&format!("{:.3},{:.3}\"", frame.x(last.distance_m), frame.y(1.0))));
}

fn tiny_loop() -> LoopConfig {
    LoopConfig {
        phases: 2,
        steps_per_phase: 60,
        train_worlds: (1..=3)
            .map(|s| WorldSpec {
                length_m: 60.0,
                ..WorldSpec::with_seed(s)
            })
            .collect(),
        eval_worlds: vec![WorldSpec {
            length_m: 60.0,
            ..WorldSpec::with_seed(40)
        }],
        eval_steps: 30,
        model: small_model(),
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
        scale_updates_with_data: true,
        seed: 3,
    }
}

#[test]
fn run_loop_artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("loop.json");
    std::fs::write(&cfg, serde_json::to_string(&tiny_loop()).unwrap()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["run-loop", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    ok(&["--threads", "3", "run-loop", "--config", s(&cfg), "--out", s(&b)]);
    for name in ["dataset.ndjson", "model.json", "reports.json", "phases.json", "loss.json"] {
        assert_eq!(file_hash(&a.join(name)).unwrap(), file_hash(&b.join(name)).unwrap(), "{name}");
    }
    ok(&["plot", "--curve", s(&a.join("reports.json")), "--out", s(&a)]);
    assert!(a.join("learning_curve.svg").exists());

    let printed = ok(&["run-loop", "--print-config"]);
    let config: LoopConfig = serde_json::from_slice(&printed.stdout).unwrap();
    assert_eq!(config, LoopConfig::benchmark());
}
