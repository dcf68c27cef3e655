#![allow(dead_code)]

use cim_core::periphery::QuantConfig;
use cim_core::tile::TileGeometry;
use cim_nn::network::LayerSpec;
use cim_nn::train::DropoutMode;
use cim_nn::{train, Dataset, FloatWeights, NetworkSpec, Shape, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8×8 grayscale network with two conv stages, one pool each, and a dense head.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        name: "tiny".into(),
        input: Shape::new(8, 8, 1),
        layers: vec![
            LayerSpec::conv3(8),
            LayerSpec::pool2(),
            LayerSpec::conv3(12),
            LayerSpec::pool2(),
            LayerSpec::Dense { units: 10 },
        ],
    }
}

/// Noise images whose label is the brightest of ten fixed pixel groups, so
/// a small network can learn something.
pub fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * 64);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        for p in 0..64 {
            let base: u8 = rng.random_range(0..120);
            pixels.push(if p % 10 == usize::from(label) { base + 120 } else { base });
        }
        labels.push(label);
    }
    Dataset::new(8, 8, 1, pixels, labels).unwrap()
}

pub fn trained(spec: &NetworkSpec, data: &Dataset, dropout: DropoutMode, seed: u64) -> FloatWeights {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        dropout,
        seed,
        ..TrainConfig::default()
    };
    train(spec, data, None, &cfg, &QuantConfig::default(), &TileGeometry::default(), |_| {})
        .unwrap()
        .weights
}
