//! Crate-wide error type and CLI exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TidaError {
    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no eligible token for skill {skill} in caption: {caption:?}")]
    NoEligibleToken { skill: String, caption: String },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("generation failed: {0}")]
    Generation(String),
}

impl TidaError {
    /// Process exit code for the CLI: 2 input/integrity, 3 partial
    /// generation failure, 4 degenerate statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            TidaError::Generation(_) => 3,
            TidaError::DegenerateLabels(_) => 4,
            _ => 2,
        }
    }
}
