//! The `land` command-line tool: world generation, data collection,
//! training, evaluation, the collect/train loop, plotting and the live
//! monitor session.

mod commands;
pub mod manifest;
pub mod plot;
pub mod serve;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Exit status for a usage error (bad flags, missing inputs).
pub const EXIT_USAGE: i32 = 1;
/// Exit status for a failure while running a valid command.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] land_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),

    #[error("serve: {0}")]
    Serve(String),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "land", version, about = "Learn sidewalk navigation from disengagements")]
pub struct Cli {
    /// Worker threads for rollouts and gradients (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate worlds and write them as world.v1 documents.
    GenWorlds(GenWorldsArgs),
    /// Roll a policy under the simulated monitor and record a dataset.
    Collect(CollectArgs),
    /// Train the disengagement predictor (or the imitation baseline).
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out worlds.
    Evaluate(EvaluateArgs),
    /// Alternate collection and training from a loop config.
    RunLoop(RunLoopArgs),
    /// Evaluate, finetune on the new data, and evaluate again.
    Finetune(FinetuneArgs),
    /// Render SVG charts from reports and planner diagnostics.
    Plot(PlotArgs),
    /// Serve a live session to a monitor client over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    /// A world.v1 file (repeatable).
    #[arg(long = "world")]
    pub world_files: Vec<PathBuf>,
    /// Generate a world with default geometry from this seed (repeatable).
    #[arg(long = "world-seed")]
    pub world_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    /// Planner over a learned model (needs --model).
    Land,
    /// Imitation baseline (needs a land-bc.v1 --model).
    Bc,
    Scripted,
    Random,
    /// Planner scored by simulating the monitor forward.
    Oracle,
}

#[derive(Debug, Args)]
pub struct PlannerArgs {
    /// Planner config JSON (defaults to the built-in settings).
    #[arg(long)]
    pub planner: Option<PathBuf>,
    /// Override the planner sample count.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenWorldsArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated world seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Base WorldSpec JSON; its seed is replaced by each of --seeds.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub policy: PolicyChoice,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub worlds: WorldArgs,
    /// Step budget per world.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pure-pursuit lookahead (m).
    #[arg(long, default_value_t = 1.0)]
    pub lookahead: f64,
    #[command(flatten)]
    pub planner: PlannerArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the imitation baseline instead of the predictor.
    #[arg(long)]
    pub bc: bool,
    /// TrainConfig JSON (BcConfig with --bc).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ModelConfig JSON for a fresh network.
    #[arg(long = "model-config")]
    pub model_config: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Seed for fresh weights.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// land-model.v1 or land-bc.v1 checkpoint.
    #[arg(long, required = true)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub worlds: WorldArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub planner: PlannerArgs,
}

#[derive(Debug, Args)]
pub struct RunLoopArgs {
    /// LoopConfig JSON.
    #[arg(long, required_unless_present = "print_config")]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Dataset to start from (any collection policy).
    #[arg(long)]
    pub initial: Option<PathBuf>,
    /// Print the built-in benchmark config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The dataset the model was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// FinetuneConfig JSON (defaults to the built-in benchmark).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// EvalReport JSON; writes cdf.svg.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON array of EvalReports (run-loop's reports.json); writes learning_curve.svg.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Planner diagnostics JSON; writes plan.svg.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Output directory (defaults to the first input's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub worlds: WorldArgs,
    #[arg(long, value_enum, default_value = "land")]
    pub policy: PolicyChoice,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Simulation steps per second.
    #[arg(long, default_value_t = 5.0)]
    pub rate: f64,
    /// Human-monitor mode: the simulated monitor is switched off.
    #[arg(long)]
    pub human: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub lookahead: f64,
    /// Stop after this many steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Directory for the recorded dataset and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub planner: PlannerArgs,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status. Messages go to stdout/stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(cli.command, &argv)),
            Err(e) => Err(CliError::Usage(format!("--threads {n}: {e}"))),
        },
        None => commands::dispatch(cli.command, &argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `land --help` for usage");
            }
            e.exit_code()
        }
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
