use std::path::Path;

use thiserror::Error;

/// Exit status for validation failures (bad config, parameters, shapes).
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for I/O and decoding failures.
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, message: impl ToString) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<parallax_core::Error> for CliError {
    fn from(e: parallax_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
