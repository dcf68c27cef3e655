//! Subcommand implementations. Each returns the manifest of its run directory.

pub mod fetch;
pub mod mac;
pub mod nn;
pub mod report;
pub mod states;
pub mod sweep;
