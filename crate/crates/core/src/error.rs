use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible shapes: {0}")]
    IncompatibleShape(String),

    #[error("pooling geometry: {0}")]
    PoolingGeometry(String),

    #[error("corrupted state: {0}")]
    CorruptedState(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid label {label} (expected 0..{classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no face box in any frame of clip {0}")]
    NoFace(String),

    #[error("malformed annotation for clip {clip}: {reason}")]
    MalformedAnnotation { clip: String, reason: String },

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("annotations {path}:{line}: {reason}")]
    Annotations {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::IncompatibleShape(msg.into())
}
