//! Channel-based mapping of weight matrices onto tiles.
//!
//! A weighted layer's `depth × out` matrix is cut into blocks of
//! `n_layers · n_rows` rows by `n_cols` columns. Each block (a slot) holds one
//! output channel per column; the stacked layers extend the dot-product depth.
//! A slot uses `2 · n_slices` physical tiles: one positive and one negative
//! plane per weight slice.

use std::ops::Range;

use cim_core::device::LevelScheme;
use cim_core::periphery::QuantConfig;
use cim_core::pipeline::{program_slot, read_back, Slot};
use cim_core::tile::Tile;
use cim_core::variation::{perturb_tile_indexed, stream_rng, Stream, VariationSpec};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::quant::QuantizedNetwork;

/// One weight block and the physical tiles holding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAssignment {
    pub row_block: usize,
    pub col_block: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Network-wide index of the first plane; planes are consecutive.
    pub first_tile: usize,
    pub n_planes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMapping {
    /// Weighted-layer index.
    pub layer: usize,
    pub depth: usize,
    pub out: usize,
    pub slot_depth: usize,
    pub slot_width: usize,
    /// Row-block major.
    pub assignments: Vec<TileAssignment>,
}

impl LayerMapping {
    pub fn new(layer: usize, depth: usize, out: usize, slot_depth: usize, slot_width: usize, n_planes: usize, first_tile: usize) -> Self {
        let rb = depth.div_ceil(slot_depth);
        let cb = out.div_ceil(slot_width);
        let mut assignments = Vec::with_capacity(rb * cb);
        for r in 0..rb {
            for c in 0..cb {
                let k = assignments.len();
                assignments.push(TileAssignment {
                    row_block: r,
                    col_block: c,
                    rows: r * slot_depth..((r + 1) * slot_depth).min(depth),
                    cols: c * slot_width..((c + 1) * slot_width).min(out),
                    first_tile: first_tile + k * n_planes,
                    n_planes,
                });
            }
        }
        LayerMapping {
            layer,
            depth,
            out,
            slot_depth,
            slot_width,
            assignments,
        }
    }

    pub fn row_blocks(&self) -> usize {
        self.depth.div_ceil(self.slot_depth)
    }

    pub fn col_blocks(&self) -> usize {
        self.out.div_ceil(self.slot_width)
    }

    pub fn n_tiles(&self) -> usize {
        self.assignments.iter().map(|a| a.n_planes).sum()
    }

    /// Slot, plane layer, row and column of matrix entry `(k, c)`.
    pub fn locate(&self, k: usize, c: usize, n_rows: usize) -> (usize, usize, usize, usize) {
        let s = (k / self.slot_depth) * self.col_blocks() + c / self.slot_width;
        let local = k % self.slot_depth;
        (s, local / n_rows, local % n_rows, c % self.slot_width)
    }
}

/// Columns dropped in each slot at training step `step`: `[layer][slot]`.
/// `slots` lists the slot count of every layer that takes dropout.
pub fn dropped_columns(seed: u64, step: u64, slots: &[usize], width: usize, count: usize) -> Vec<Vec<Vec<usize>>> {
    let mut rng = stream_rng(seed, Stream::Dropout, step);
    let count = count.min(width);
    slots
        .iter()
        .map(|&n| (0..n).map(|_| sample(&mut rng, width, count).into_vec()).collect())
        .collect()
}

/// A quantized network laid out on tiles. Tiles are programmed per layer on
/// demand, so the whole network never has to be resident at once.
#[derive(Debug, Clone)]
pub struct MappedNetwork {
    pub net: QuantizedNetwork,
    pub template: Tile,
    pub scheme: LevelScheme,
    pub layers: Vec<LayerMapping>,
}

impl MappedNetwork {
    pub fn total_tiles(&self) -> usize {
        self.layers.iter().map(LayerMapping::n_tiles).sum()
    }

    pub fn quant(&self) -> &QuantConfig {
        &self.net.quant
    }

    /// Fails unless the mapping covers every weighted layer.
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() != self.net.layers.len() {
            return Err(NnError::State(format!(
                "mapping covers {} of {} weighted layers",
                self.layers.len(),
                self.net.layers.len()
            )));
        }
        Ok(())
    }

    /// Integer weights of slot `s` in layer `layer`, row-major.
    pub fn block(&self, layer: usize, s: usize) -> Vec<i32> {
        let a = &self.layers[layer].assignments[s];
        let q = &self.net.layers[layer].weights;
        a.rows
            .clone()
            .flat_map(|k| a.cols.clone().map(move |c| i32::from(q.codes[k * q.out + c])))
            .collect()
    }

    /// Program slot `s` of `layer` and apply device variation (one fresh draw
    /// per physical tile, keyed by its network-wide index).
    pub fn program(&self, layer: usize, s: usize, variation: &VariationSpec) -> Result<Slot> {
        let a = &self.layers[layer].assignments[s];
        let w = self.block(layer, s);
        let mut slot = program_slot(&self.template, &w, a.rows.len(), a.cols.len(), self.quant(), self.scheme)?;
        if variation.sigma_d2d > 0.0 {
            for (p, t) in slot.planes.iter_mut().enumerate() {
                *t = perturb_tile_indexed(t, variation, (a.first_tile + p) as u64)?;
            }
        }
        Ok(slot)
    }

    /// Program every tile at σ = 0 and read the weight codes back.
    pub fn unmap(&self) -> Result<Vec<Vec<i8>>> {
        self.check()?;
        self.layers
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let blocks = (0..m.assignments.len())
                    .into_par_iter()
                    .map(|s| {
                        let slot = self.program(l, s, &VariationSpec::none())?;
                        Ok(read_back(&slot, self.quant())?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut codes = vec![0i8; m.depth * m.out];
                for (a, w) in m.assignments.iter().zip(blocks) {
                    let width = a.cols.len();
                    for (i, k) in a.rows.clone().enumerate() {
                        for (j, c) in a.cols.clone().enumerate() {
                            codes[k * m.out + c] = i8::try_from(w[i * width + j])
                                .map_err(|_| NnError::State(format!("read-back weight {} out of range", w[i * width + j])))?;
                        }
                    }
                }
                Ok(codes)
            })
            .collect()
    }
}

/// Lay out `net` on tiles shaped like `template`. With a `budget`, fails at
/// the first layer that would push the tile count past it.
pub fn map_network(net: QuantizedNetwork, template: Tile, scheme: LevelScheme, budget: Option<usize>) -> Result<MappedNetwork> {
    net.quant.validate()?;
    let (slot_depth, slot_width) = Slot::capacity(&template);
    let n_planes = 2 * net.quant.n_slices();
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut total = 0;
    for (i, l) in net.layers.iter().enumerate() {
        let m = LayerMapping::new(i, l.weights.depth, l.weights.out, slot_depth, slot_width, n_planes, total);
        total += m.n_tiles();
        if let Some(b) = budget {
            if total > b {
                let required = total
                    + net.layers[i + 1..]
                        .iter()
                        .map(|l| l.weights.depth.div_ceil(slot_depth) * l.weights.out.div_ceil(slot_width) * n_planes)
                        .sum::<usize>();
                return Err(NnError::Capacity {
                    layer: i,
                    required,
                    budget: b,
                });
            }
        }
        layers.push(m);
    }
    Ok(MappedNetwork {
        net,
        template,
        scheme,
        layers,
    })
}
