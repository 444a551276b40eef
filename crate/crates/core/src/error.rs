use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or call argument violates its contract.
    #[error("invalid `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("index out of range: {what} = {index} (limit {limit})")]
    InvalidIndex {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular kernel matrix (det = {det:e}, jitter = {jitter:e})")]
    SingularKernel { det: f64, jitter: f64 },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    Asymmetric { row: usize, col: usize, gap: f64 },

    #[error("gradient check failed: max relative error {max_rel_error:e} exceeds {tolerance:e}")]
    GradientCheck { max_rel_error: f64, tolerance: f64 },

    #[error("distribution {0}")]
    InvalidDistribution(String),

    /// A numerical failure raised inside the training loop.
    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig { .. } | Error::Parse { .. } | Error::DimensionMismatch(_) => 2,
            Error::Io { .. } => 4,
            Error::Training { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
