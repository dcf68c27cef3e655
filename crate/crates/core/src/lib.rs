//! Device-to-array models for a 3D stacked α-IGZO nanosheet + bi-layer RRAM
//! compute-in-memory tile.

pub mod device;
pub mod error;
pub mod params;
pub mod periphery;
pub mod pipeline;
pub mod tile;
pub mod variation;

pub use error::{CimError, Result};
