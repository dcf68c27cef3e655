//! `cimsim`: experiment runner for the compute-in-memory simulator.

pub mod cmd;
pub mod config;
pub mod run;

use std::fmt;

use cim_core::CimError;
use cim_nn::NnError;

pub use config::ExperimentConfig;
pub use run::{ErrorRecord, Manifest, RunDir};

/// Errors raised by the runner itself.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            message: m.into(),
        }
    }

    pub fn input(m: impl Into<String>) -> Self {
        CliError {
            kind: "input",
            message: m.into(),
        }
    }

    pub fn state(m: impl Into<String>) -> Self {
        CliError {
            kind: "state",
            message: m.into(),
        }
    }

    pub fn checksum(m: impl Into<String>) -> Self {
        CliError {
            kind: "checksum",
            message: m.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn core_kind(e: &CimError) -> &'static str {
    match e {
        CimError::InvalidParameter { .. } => "parameter",
        CimError::InvalidInput(_) | CimError::IndexOutOfRange { .. } => "input",
        CimError::Internal(_) => "internal",
        CimError::Convergence { .. } => "convergence",
        CimError::Format { .. } => "format",
        CimError::Io(_) => "io",
    }
}

/// Stable machine-readable category of an error chain.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.kind;
        }
        if let Some(n) = cause.downcast_ref::<NnError>() {
            return match n {
                NnError::Core(c) => core_kind(c),
                NnError::UnknownPreset(_) | NnError::InvalidInput(_) => "input",
                NnError::Shape(_) => "shape",
                NnError::Format { .. } => "format",
                NnError::Io { .. } => "io",
                NnError::Diverged { .. } => "diverged",
                NnError::Capacity { .. } => "capacity",
                NnError::State(_) => "state",
            };
        }
        if let Some(c) = cause.downcast_ref::<CimError>() {
            return core_kind(c);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<csv::Error>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return "format";
        }
    }
    "other"
}
