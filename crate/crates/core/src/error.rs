use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("ledger line {line}: {message}")]
    CorruptLedger { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("backend error: {0}")]
    Backend(#[from] crate::backend::BackendError),

    #[error("evidence provider error: {0}")]
    Provider(#[from] crate::providers::ProviderError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: u32, reason: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefixes parse/validation messages with a location such as a file path.
    pub fn context(self, location: String) -> Self {
        match self {
            Error::Parse(m) => Error::Parse(format!("{location}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{location}: {m}")),
            other => other,
        }
    }
}
