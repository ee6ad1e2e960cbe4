use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    /// A precondition on an operation's arguments was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("class `{class}` has no {what} samples; metric is undefined")]
    UndefinedClass { class: String, what: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match model at layer `{path}`: {reason}")]
    CheckpointMismatch { path: String, reason: String },

    #[error("gradient probe error: {0}")]
    Probe(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
