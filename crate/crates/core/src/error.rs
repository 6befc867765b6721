use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("{path}:{line}: {message}")]
    TraceRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("runtime failure: {0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn trace(msg: impl Into<String>) -> Self {
        Error::Trace(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    /// Process exit code for this error class: 2 config, 3 trace, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Trace(_) | Error::TraceRow { .. } => 3,
            Error::Runtime(_) | Error::Io { .. } => 4,
        }
    }
}
