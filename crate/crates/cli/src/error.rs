use crate::config::ConfigError;
use thiserror::Error;

/// Process exit codes: 0 success, 1 config error, 2 theory-check failures
/// present, 3 I/O error.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Core(#[from] shift_lab_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing run data: {0}")]
    MissingRun(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(_) => 1,
            CliError::Io(_) | CliError::MissingRun(_) => 3,
        }
    }
}
