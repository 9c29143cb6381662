use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action {index}: actions are numbered 1..={k}")]
    InvalidAction { index: u32, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity exceeded: {what} needs {needed}, cap is {cap}{hint}")]
    Capacity {
        what: &'static str,
        needed: u128,
        cap: u128,
        hint: &'static str,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity { .. } => 3,
            _ => 2,
        }
    }

    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Capacity { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
