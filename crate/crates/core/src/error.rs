use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called without a recorded forward pass")]
    NoForwardPass,

    #[error("weight file has wrong magic bytes")]
    BadMagic,

    #[error("weight file size mismatch: {0}")]
    SizeMismatch(String),

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quota shortfall: {0}")]
    QuotaShortfall(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
