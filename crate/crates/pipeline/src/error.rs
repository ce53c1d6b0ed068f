use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("artifact error at {path}: {reason}")]
    Artifact { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Numerical(_) => 3,
            PipelineError::Artifact { .. } => 4,
        }
    }

    pub(crate) fn artifact(path: &Path, reason: impl ToString) -> Self {
        PipelineError::Artifact {
            path: path.display().to_string(),
            reason: reason.to_string(),
        }
    }
}

impl From<pbdw_core::Error> for PipelineError {
    fn from(e: pbdw_core::Error) -> Self {
        match e {
            pbdw_core::Error::Artifact { path, reason } => PipelineError::Artifact { path, reason },
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Artifact {
            path: "<csv>".into(),
            reason: e.to_string(),
        }
    }
}
