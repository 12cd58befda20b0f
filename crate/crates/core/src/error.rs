use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum JiifError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("data error at {}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl JiifError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        JiifError::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        JiifError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        JiifError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        JiifError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            JiifError::Config { .. } | JiifError::InvalidArgument(_) => 2,
            JiifError::Data { .. } | JiifError::Io { .. } | JiifError::Checkpoint(_) => 3,
            JiifError::Numeric(_) => 4,
            JiifError::InvalidState(_) => 2,
        }
    }
}

pub type Result<T, E = JiifError> = std::result::Result<T, E>;
