use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("order-{order} model needs ~{estimate_bytes} bytes, over the {budget_bytes}-byte budget")]
    MemoryBudget {
        order: usize,
        estimate_bytes: u64,
        budget_bytes: u64,
    },

    #[error("target patch size {target} is unreachable; achievable range is [{min:.4}, {max:.4}]")]
    UnreachableTarget { target: f64, min: f64, max: f64 },

    #[error("invalid patch boundaries: {0}")]
    Boundaries(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("FLOP target {target:.4e} unreachable; template spans [{low:.4e}, {high:.4e}]")]
    FlopTarget { target: f64, low: f64, high: f64 },

    #[error("evaluation data overlaps training data ({0} shared documents)")]
    Leakage(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
