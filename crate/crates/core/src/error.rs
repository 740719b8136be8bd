//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// The variants map onto the CLI exit codes: config problems exit with 2,
/// data problems with 3, numerical failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error in {path} line {line}: {msg}")]
    DataAt {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::DataAt { .. } | Error::Csv(_) => 3,
            Error::Numerical(_) => 4,
            Error::Io(_) | Error::Json(_) => 3,
        }
    }
}
