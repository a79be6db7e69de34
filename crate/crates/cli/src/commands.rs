use std::net::TcpListener;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use land_core::dataset::Dataset;
use land_core::experiment::{
    evaluate, evaluate_recording, finetune_experiment, generate_worlds, run_land_from, train_bc, BcConfig, BcParams,
    EvalReport, FinetuneConfig, LoopConfig, Policy, PolicyKind, BC_FORMAT,
};
use land_core::model::{train, ModelConfig, ModelParams, TrainConfig, MODEL_FORMAT};
use land_core::planner::PlannerConfig;
use land_core::sim::Oracle;
use land_core::world::{World, WorldSpec};

use crate::manifest::ManifestBuilder;
use crate::serve::{serve_one, ServeOptions, ServeSession, SessionOptions};
use crate::{
    ensure_dir, plot, CliError, CollectArgs, Command, EvaluateArgs, FinetuneArgs, GenWorldsArgs, PlannerArgs, PlotArgs,
    PolicyChoice, Result, RunLoopArgs, ServeArgs, TrainArgs, WorldArgs,
};

pub const DATASET_FILE: &str = "dataset.ndjson";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORTS_FILE: &str = "reports.json";

pub fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::GenWorlds(a) => gen_worlds(a, argv),
        Command::Collect(a) => collect(a, argv),
        Command::Train(a) => train_cmd(a, argv),
        Command::Evaluate(a) => evaluate_cmd(a, argv),
        Command::RunLoop(a) => run_loop(a, argv),
        Command::Finetune(a) => finetune(a, argv),
        Command::Plot(a) => plot_cmd(a, argv),
        Command::Serve(a) => serve(a, argv),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn load_worlds(args: &WorldArgs, manifest: &mut ManifestBuilder) -> Result<Vec<World>> {
    if args.world_files.is_empty() && args.world_seeds.is_empty() {
        return Err(CliError::Usage("give at least one --world or --world-seed".into()));
    }
    let mut worlds = Vec::new();
    for path in &args.world_files {
        manifest.input(path)?;
        worlds.push(World::from_json(&read_text(path)?)?);
    }
    let specs: Vec<WorldSpec> = args.world_seeds.iter().map(|&s| WorldSpec::with_seed(s)).collect();
    worlds.extend(generate_worlds(&specs)?);
    manifest.seeds(worlds.iter().map(|w| w.spec.seed));
    Ok(worlds)
}

fn planner_config(args: &PlannerArgs, manifest: &mut ManifestBuilder) -> Result<PlannerConfig> {
    let mut config = match &args.planner {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => PlannerConfig::default(),
    };
    if let Some(n) = args.samples {
        config.samples = n;
    }
    config.validate()?;
    Ok(config)
}

enum Checkpoint {
    Land(ModelParams),
    Bc(BcParams),
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = read_text(path)?;
    #[derive(serde::Deserialize)]
    struct Header {
        format: String,
    }
    let header: Header = serde_json::from_str(&text)?;
    match header.format.as_str() {
        MODEL_FORMAT => Ok(Checkpoint::Land(ModelParams::from_json(&text)?)),
        BC_FORMAT => Ok(Checkpoint::Bc(BcParams::from_json(&text)?)),
        other => Err(land_core::Error::Version {
            expected: format!("{MODEL_FORMAT} or {BC_FORMAT}"),
            found: other.into(),
        }
        .into()),
    }
}

fn policy_kind(
    choice: PolicyChoice,
    model: Option<&Path>,
    planner: &PlannerArgs,
    lookahead: f64,
    manifest: &mut ManifestBuilder,
) -> Result<PolicyKind> {
    let checkpoint = |manifest: &mut ManifestBuilder| -> Result<Checkpoint> {
        let path = model.ok_or_else(|| CliError::Usage(format!("--policy {choice:?} needs --model")))?;
        manifest.input(path)?;
        load_checkpoint(path)
    };
    Ok(match choice {
        PolicyChoice::Land => match checkpoint(manifest)? {
            Checkpoint::Land(params) => PolicyKind::Land {
                params,
                planner: planner_config(planner, manifest)?,
            },
            Checkpoint::Bc(_) => return Err(CliError::Usage("--policy land needs a predictor checkpoint".into())),
        },
        PolicyChoice::Bc => match checkpoint(manifest)? {
            Checkpoint::Bc(params) => PolicyKind::Bc(params),
            Checkpoint::Land(_) => return Err(CliError::Usage("--policy bc needs a land-bc.v1 checkpoint".into())),
        },
        PolicyChoice::Scripted => PolicyKind::ScriptedPurePursuit { lookahead_m: lookahead },
        PolicyChoice::Random => PolicyKind::Random,
        PolicyChoice::Oracle => PolicyKind::OraclePlanner {
            planner: planner_config(planner, manifest)?,
            oracle: Oracle::default(),
        },
    })
}

fn gen_worlds(args: GenWorldsArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("gen-worlds", argv);
    let base = match &args.spec {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => WorldSpec::default(),
    };
    manifest.config(&base)?.seeds(args.seeds.iter().copied());
    let specs: Vec<WorldSpec> = args
        .seeds
        .iter()
        .map(|&seed| WorldSpec { seed, ..base.clone() })
        .collect();
    let worlds = generate_worlds(&specs)?;
    ensure_dir(&args.out)?;
    for world in &worlds {
        let path = args.out.join(format!("world_{}.json", world.spec.seed));
        write_text(&path, &world.to_json())?;
        manifest.output(&path)?;
    }
    manifest.finish(&args.out)?;
    println!("wrote {} worlds to {}", worlds.len(), args.out.display());
    Ok(())
}

fn collect(args: CollectArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("collect", argv);
    let kind = policy_kind(args.policy, args.model.as_deref(), &args.planner, args.lookahead, &mut manifest)?;
    let worlds = load_worlds(&args.worlds, &mut manifest)?;
    manifest.seeds([args.seed]);
    let (report, dataset) = evaluate_recording(&kind, &worlds, args.steps, args.seed, true)?;
    ensure_dir(&args.out)?;
    let data_path = args.out.join(DATASET_FILE);
    dataset.save(&data_path)?;
    let report_path = args.out.join(REPORT_FILE);
    report.save(&report_path)?;
    manifest.output(&data_path)?.output(&report_path)?;
    manifest.finish(&args.out)?;
    println!(
        "collected {} records ({} disengagements) with {}",
        dataset.len(),
        dataset.disengagement_count(),
        kind.tag()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("train", argv);
    manifest.input(&args.data)?;
    let dataset = Dataset::load(&args.data)?;
    let model_config = match &args.model_config {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => ModelConfig::default(),
    };
    ensure_dir(&args.out)?;
    let model_path = args.out.join(MODEL_FILE);
    let loss_path = args.out.join("loss.json");
    if args.bc {
        let config: BcConfig = match &args.config {
            Some(path) => {
                manifest.input(path)?;
                read_json(path)?
            }
            None => BcConfig::default(),
        };
        manifest.config(&config)?.seeds([config.seed]);
        let outcome = train_bc(&dataset, &model_config, &config)?;
        outcome.params.save(&model_path)?;
        write_json(&loss_path, &outcome.loss_history)?;
        println!("trained imitation baseline for {} steps", config.steps);
    } else {
        let config: TrainConfig = match &args.config {
            Some(path) => {
                manifest.input(path)?;
                read_json(path)?
            }
            None => TrainConfig::default(),
        };
        let init = match &args.init {
            Some(path) => {
                manifest.input(path)?;
                ModelParams::load(path)?
            }
            None => ModelParams::init(model_config, args.init_seed)?,
        };
        manifest.config(&config)?.seeds([args.init_seed, config.seed]);
        let outcome = train(&init, &dataset, &config)?;
        outcome.params.save(&model_path)?;
        write_json(&loss_path, &outcome.loss_history)?;
        println!(
            "trained predictor for {} steps, final minibatch loss {:.4}",
            config.steps,
            outcome.loss_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    manifest.output(&model_path)?.output(&loss_path)?;
    manifest.finish(&args.out)?;
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("evaluate", argv);
    manifest.input(&args.model)?;
    let kind = match load_checkpoint(&args.model)? {
        Checkpoint::Land(params) => PolicyKind::Land {
            params,
            planner: planner_config(&args.planner, &mut manifest)?,
        },
        Checkpoint::Bc(params) => PolicyKind::Bc(params),
    };
    let worlds = load_worlds(&args.worlds, &mut manifest)?;
    manifest.seeds([args.seed]);
    let report = evaluate(&kind, &worlds, args.steps, args.seed)?;
    ensure_dir(&args.out)?;
    let path = args.out.join(REPORT_FILE);
    report.save(&path)?;
    manifest.output(&path)?;
    manifest.finish(&args.out)?;
    print_report(kind.tag(), &report);
    Ok(())
}

fn print_report(tag: &str, report: &EvalReport) {
    println!(
        "{tag}: {:.2} m average over {} disengagements ({:.1} m engaged, {} trajectories)",
        report.avg_distance_m,
        report.disengagements,
        report.total_distance_m,
        report.trajectory_distances_m.len()
    );
}

fn run_loop(args: RunLoopArgs, argv: &[String]) -> Result<()> {
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&LoopConfig::benchmark())?);
        return Ok(());
    }
    let (Some(config_path), Some(out)) = (&args.config, &args.out) else {
        return Err(CliError::Usage("run-loop needs --config and --out".into()));
    };
    let mut manifest = ManifestBuilder::start("run-loop", argv);
    manifest.input(config_path)?;
    let config: LoopConfig = read_json(config_path)?;
    manifest.config(&config)?.seeds(
        [config.seed]
            .into_iter()
            .chain(config.train_worlds.iter().map(|w| w.seed))
            .chain(config.eval_worlds.iter().map(|w| w.seed)),
    );
    let initial = match &args.initial {
        Some(path) => {
            manifest.input(path)?;
            Dataset::load(path)?
        }
        None => Dataset::new(),
    };
    let outcome = run_land_from(&config, &initial)?;
    ensure_dir(out)?;
    let data_path = out.join(DATASET_FILE);
    outcome.dataset.save(&data_path)?;
    let model_path = out.join(MODEL_FILE);
    outcome.params.save(&model_path)?;
    let reports_path = out.join(REPORTS_FILE);
    write_json(&reports_path, &outcome.reports)?;
    let phases_path = out.join("phases.json");
    write_json(&phases_path, &outcome.phases)?;
    let loss_path = out.join("loss.json");
    write_json(&loss_path, &outcome.loss_history)?;
    for path in [&data_path, &model_path, &reports_path, &phases_path, &loss_path] {
        manifest.output(path)?;
    }
    manifest.finish(out)?;
    for (k, report) in outcome.reports.iter().enumerate() {
        print_report(&format!("after {k} phases"), report);
    }
    Ok(())
}

fn finetune(args: FinetuneArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("finetune", argv);
    manifest.input(&args.model)?.input(&args.data)?;
    let params = ModelParams::load(&args.model)?;
    let base = Dataset::load(&args.data)?;
    let config: FinetuneConfig = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => FinetuneConfig::benchmark(),
    };
    manifest
        .config(&config)?
        .seeds([config.seed].into_iter().chain(config.worlds.iter().map(|w| w.seed)));
    let outcome = finetune_experiment(&params, &base, &config)?;
    ensure_dir(&args.out)?;
    let before = args.out.join("before.json");
    outcome.before.save(&before)?;
    let after = args.out.join("after.json");
    outcome.after.save(&after)?;
    let model_path = args.out.join(MODEL_FILE);
    outcome.params.save(&model_path)?;
    let data_path = args.out.join(DATASET_FILE);
    outcome.dataset.save(&data_path)?;
    for path in [&before, &after, &model_path, &data_path] {
        manifest.output(path)?;
    }
    manifest.finish(&args.out)?;
    print_report("before", &outcome.before);
    print_report("after", &outcome.after);
    Ok(())
}

fn plot_cmd(args: PlotArgs, argv: &[String]) -> Result<()> {
    let first = [&args.report, &args.curve, &args.plan]
        .into_iter()
        .flatten()
        .next()
        .ok_or_else(|| CliError::Usage("give --report, --curve or --plan".into()))?;
    let out: PathBuf = match &args.out {
        Some(dir) => dir.clone(),
        None => first.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    ensure_dir(&out)?;
    let mut manifest = ManifestBuilder::start("plot", argv);
    if let Some(path) = &args.report {
        manifest.input(path)?;
        let report = EvalReport::load(path)?;
        let svg = out.join("cdf.svg");
        write_text(&svg, &plot::cdf_svg(&report))?;
        manifest.output(&svg)?;
    }
    if let Some(path) = &args.curve {
        manifest.input(path)?;
        let reports: Vec<EvalReport> = read_json(path)?;
        let svg = out.join("learning_curve.svg");
        write_text(&svg, &plot::learning_curve_svg(&reports))?;
        manifest.output(&svg)?;
    }
    if let Some(path) = &args.plan {
        manifest.input(path)?;
        let svg = out.join("plan.svg");
        write_text(&svg, &plot::plan_svg(&read_json(path)?))?;
        manifest.output(&svg)?;
    }
    manifest.finish(&out)?;
    println!("wrote charts to {}", out.display());
    Ok(())
}

fn serve(args: ServeArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::start("serve", argv);
    let kind = policy_kind(args.policy, args.model.as_deref(), &args.planner, args.lookahead, &mut manifest)?;
    let mut worlds = load_worlds(&args.worlds, &mut manifest)?;
    if worlds.len() != 1 {
        return Err(CliError::Usage("serve runs exactly one world".into()));
    }
    let world = worlds.remove(0);
    manifest.seeds([args.seed]);
    if !(args.rate > 0.0 && args.rate.is_finite()) {
        return Err(CliError::Usage(format!("--rate must be positive, got {}", args.rate)));
    }
    let listener =
        TcpListener::bind((args.host.as_str(), args.port)).map_err(|e| CliError::Serve(format!("bind {}:{}: {e}", args.host, args.port)))?;
    let addr = listener.local_addr().map_err(|e| CliError::Serve(e.to_string()))?;
    let oracle = (!args.human).then(Oracle::default);
    let mut session = ServeSession::new(world, Policy::new(kind, args.seed), SessionOptions { oracle });
    println!("serving ws://{addr} (world digest {})", session.world_digest());
    serve_one(
        &listener,
        &mut session,
        ServeOptions {
            rate_hz: args.rate,
            max_ticks: args.max_steps,
        },
    )?;
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let path = out.join(DATASET_FILE);
        session.dataset().save(&path)?;
        manifest.output(&path)?;
        manifest.finish(out)?;
    }
    println!("session ended after {} records", session.dataset().len());
    Ok(())
}
