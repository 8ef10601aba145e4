use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so the CLI can map them onto its exit-code
/// contract: usage/config errors exit 1, data errors exit 2, numerical
/// failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("token id {id} out of range (vocab size {size})")]
    TokenOutOfRange { id: u32, size: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite {what} in parameter group `{group}` at step {step}")]
    NonFinite {
        what: &'static str,
        group: String,
        step: u64,
    },
}

impl Error {
    /// Exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::MalformedRow { .. }
            | Error::Data(_)
            | Error::Vocab(_)
            | Error::TokenOutOfRange { .. }
            | Error::Checkpoint(_) => 2,
            Error::NonFinite { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
