use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the attribution library.
#[derive(Error, Debug)]
pub enum AttribError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot inpaint: the mask covers the entire image")]
    FullyMasked,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite objective at step {step}")]
    NonFinite { step: usize },

    #[error("external command failed: {0}")]
    External(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<AttribError>,
    },
}

pub type Result<T, E = AttribError> = std::result::Result<T, E>;

impl AttribError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AttribError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        AttribError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        AttribError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &AttribError {
        match self {
            AttribError::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
