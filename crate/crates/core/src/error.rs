use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, dataset, model, planner and loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world spec: {0}")]
    InvalidWorldSpec(String),

    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    #[error("reset maneuver requires a disengaged state")]
    NotDisengaged,

    #[error("reset pose at arc {arc_m:.3} m is itself disengaged ({cause})")]
    ResetFailed { arc_m: f64, cause: String },

    #[error("record rejected: {0}")]
    InvalidRecord(String),

    #[error("start index {index} out of range for dataset of {len} records")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("window starting at record {0} runs past the end of its episode without a disengagement")]
    TruncatedWindow(usize),

    #[error("insufficient-class: {0}")]
    InsufficientClass(String),

    #[error("batch size must be even and positive, got {0}")]
    OddBatch(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("enumeration of {0} sequences exceeds the brute-force guard")]
    GuardExceeded(u128),

    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),

    #[error("unsupported format {found:?}, expected {expected:?}")]
    Version { expected: String, found: String },

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
