use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("optimizer error: non-finite gradient for parameter `{0}`")]
    Optimizer(String),

    #[error("decode error: slot {slot} has value {value} outside vocabulary of size {vocab}")]
    Decode { slot: usize, value: usize, vocab: usize },

    #[error("invalid genotype: {}", .0.join("; "))]
    InvalidGenotype(Vec<String>),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("state error: {0}")]
    State(String),

    #[error("reward error: {0}")]
    Reward(String),

    #[error("training step error: {0}")]
    Training(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("matrix is not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("insufficient samples: need at least {need}, got {got}")]
    SampleCount { need: usize, got: usize },

    #[error("surrogate calibration failed: held-out accuracy {accuracy:.3} below {required:.2}; increase the training budget")]
    Calibration { accuracy: f64, required: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path} at byte {pos}: {msg}")]
    Format { path: PathBuf, pos: u64, msg: String },

    #[error("checkpoint corruption: {0}")]
    Corruption(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 config, 2 data, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigLine { .. } | Error::Config(_) | Error::InvalidGenotype(_) | Error::Decode { .. } => 1,
            Error::Format { .. } | Error::Corruption(_) | Error::Io { .. } | Error::Input(_) => 2,
            _ => 3,
        }
    }
}
