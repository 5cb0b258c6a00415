use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AsdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    TrainingDiverged { epoch: usize, batch: usize, loss: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl AsdError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AsdError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class, used by the CLI to pick an exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            AsdError::InvalidInput(_) | AsdError::DimensionMismatch { .. } => ErrorClass::Data,
            AsdError::Format { .. } | AsdError::Io { .. } | AsdError::Csv(_) => ErrorClass::Data,
            AsdError::Json(_) => ErrorClass::Config,
            AsdError::TrainingDiverged { .. } | AsdError::Numeric(_) => ErrorClass::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

pub type Result<T, E = AsdError> = std::result::Result<T, E>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(AsdError::InvalidInput(msg()))
    }
}
