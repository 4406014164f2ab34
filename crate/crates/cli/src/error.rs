use std::fmt;

use fedmtl_core::error::CoreError;

/// Process exit codes: 0 success, 2 configuration error, 3 simulation
/// divergence, 4 verification failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Config = 2,
    Divergence = 3,
    VerificationFailure = 4,
}

#[derive(Debug)]
pub struct AppError {
    pub code: ExitCode,
    pub message: String,
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn config(message: impl Into<String>) -> AppError {
        AppError { code: ExitCode::Config, message: message.into() }
    }

    pub fn divergence(message: impl Into<String>) -> AppError {
        AppError { code: ExitCode::Divergence, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> AppError {
        AppError { code: ExitCode::VerificationFailure, message: message.into() }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for AppError {}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> AppError {
        // Invalid inputs reaching the core are still configuration problems
        // from the user's point of view.
        AppError::config(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::config(format!("io error: {e}"))
    }
}
