use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module of the simulator.
#[derive(Debug, Error)]
pub enum FlstError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("decode error in {source_name}: {reason}")]
    Decode { source_name: String, reason: String },

    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FlstError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FlstError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FlstError::Shape(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        FlstError::Numeric(msg.into())
    }

    pub(crate) fn decode(source_name: impl Into<String>, reason: impl Into<String>) -> Self {
        FlstError::Decode {
            source_name: source_name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlstError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FlstError>;
