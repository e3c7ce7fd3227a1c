use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid scene {scene}: {reason}")]
    InvalidScene { scene: usize, reason: String },

    #[error("cannot place {persons} persons on a {height}x{width} canvas")]
    Packing {
        persons: usize,
        height: usize,
        width: usize,
    },

    #[error("parse error in {path} at {location}: {reason}")]
    Parse {
        path: PathBuf,
        location: String,
        reason: String,
    },

    #[error("training diverged at phase {phase}, epoch {epoch}: {reason}")]
    Diverged {
        phase: usize,
        epoch: usize,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
