//! Quantized CNNs on the stacked RRAM tile model: network presets, software
//! training with tile-column dropout, channel-based mapping onto tiles,
//! channel pruning, and inference through the analog pipeline.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod infer;
pub mod mapping;
pub mod network;
pub mod ops;
pub mod prune;
pub mod quant;
pub mod train;

pub use data::{load_dataset, Dataset, DatasetName, Splits};
pub use error::{NnError, Result};
pub use infer::{infer, infer_software, InferConfig, InferenceReport};
pub use mapping::{map_network, LayerMapping, MappedNetwork};
pub use network::{build_network, FloatWeights, NetworkSpec, Shape};
pub use prune::prune_channels;
pub use quant::{quantize_weights, QuantizedNetwork};
pub use train::{train, TrainConfig, TrainLog};
