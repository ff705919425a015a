//! CLI error classification: exit code 1 for verification failures, 2 for
//! configuration errors, 3 for I/O errors.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Verify(String),
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn config(err: impl fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn io(err: impl fmt::Display) -> Self {
        CliError::Io(err.to_string())
    }

    pub fn verify(err: impl fmt::Display) -> Self {
        CliError::Verify(err.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Verify(msg) => write!(f, "verification failed: {msg}"),
            CliError::Config(msg) => write!(f, "configuration: {msg}"),
            CliError::Io(msg) => write!(f, "i/o: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
