use std::path::PathBuf;

use thiserror::Error;

use crate::run::Stage;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },

    #[error(transparent)]
    Core(#[from] cfos_core::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("review item {0} not found")]
    UnknownItem(String),

    #[error("review item {0} already decided")]
    AlreadyDecided(String),

    #[error("no review queue in {0}")]
    NoQueue(PathBuf),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, reason: impl ToString) -> Self {
        PipelineError::Format {
            what: what.into(),
            reason: reason.to_string(),
        }
    }

    /// Stage that failed, if this error came out of a pipeline stage.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
