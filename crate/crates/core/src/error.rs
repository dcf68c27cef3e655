use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CimError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (limit {limit}) for {what}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("network solve did not converge after {iterations} iterations (last max dv = {last_delta:.3e} V)")]
    Convergence {
        iterations: usize,
        last_delta: f64,
        /// max |dv| per iteration
        trace: Vec<f64>,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CimError {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        CimError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CimError::InvalidInput(msg.into())
    }
}
