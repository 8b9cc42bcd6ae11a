//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {got:?}")]
    LayerShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is non-finite")]
    Diverged { epoch: usize, batch: usize },

    #[error("empty input set: {0}")]
    EmptySet(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { path: String, stage: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }
}
