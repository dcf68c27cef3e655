use std::path::PathBuf;

use cim_core::CimError;
use thiserror::Error;

use crate::train::TrainLog;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Core(#[from] CimError),

    #[error("unknown network preset `{0}`")]
    UnknownPreset(String),

    #[error("inconsistent network: {0}")]
    Shape(String),

    #[error("format error in {path} at byte {offset}: {reason}")]
    Format { path: PathBuf, offset: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f32,
        /// Log rows written before the divergence.
        log: TrainLog,
    },

    #[error("network needs {required} tiles, budget is {budget} (exceeded at weighted layer {layer})")]
    Capacity { layer: usize, required: usize, budget: usize },

    #[error("invalid state: {0}")]
    State(String),
}

impl NnError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        NnError::InvalidInput(msg.into())
    }

    pub(crate) fn format(path: &std::path::Path, offset: u64, reason: impl Into<String>) -> Self {
        NnError::Format {
            path: path.to_path_buf(),
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        NnError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
