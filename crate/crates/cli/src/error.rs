use std::fmt;

use slocal_core::Error as CoreError;

/// Harness failure, split by process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input; exit code 2.
    Validation(String),
    /// Failure while running or writing artifacts; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn key(key: &str, msg: impl fmt::Display) -> Self {
        CliError::Validation(format!("invalid `{key}`: {msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Domain { .. } | CoreError::InvalidConfig(_) | CoreError::Ingestion { .. } => {
                CliError::Validation(e.to_string())
            }
            CoreError::Numeric(_) | CoreError::Undefined(_) | CoreError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
