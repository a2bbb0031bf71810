use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("index {t} is below the maximum lag {max_lag}")]
    LagBoundary { t: usize, max_lag: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("simulation left the finite range at step {step}")]
    SimulationOverflow { step: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape",
            Error::NonScalarLoss { .. } => "non_scalar_loss",
            Error::NonFinite { .. } => "non_finite",
            Error::LagBoundary { .. } => "lag_boundary",
            Error::Divergence { .. } => "divergence",
            Error::SimulationOverflow { .. } => "overflow",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}
