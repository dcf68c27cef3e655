//! Versioned binary weight container.
//!
//! Layout (little-endian): `CIMW`, u32 version, u64 header length, a JSON
//! header (network, per-layer shapes, activation ranges, rescale factors,
//! free-form metadata), then each layer's weights and biases as f32.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{FloatWeights, LayerParams, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"CIMW";
pub const VERSION: u32 = 1;
const PREFIX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub weights: FloatWeights,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    shapes: Vec<(usize, usize)>,
    act_max: Vec<f32>,
    rescale: Vec<f32>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, weights: FloatWeights) -> Result<Self> {
        weights.check(&spec)?;
        Ok(Checkpoint {
            spec,
            weights,
            meta: BTreeMap::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec.clone(),
            shapes: self.weights.layers.iter().map(|l| (l.depth, l.out)).collect(),
            act_max: self.weights.act_max.clone(),
            rescale: self.weights.rescale.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for l in &self.weights.layers {
            for v in l.w.iter().chain(&l.b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, reason: String| NnError::format(path, offset as u64, reason);
        if bytes.len() < PREFIX {
            return Err(err(bytes.len(), "truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(0, "bad magic (expected CIMW)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = PREFIX
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(bytes.len(), format!("truncated JSON header of {hlen} bytes")))?;
        let h: Header =
            serde_json::from_slice(&bytes[PREFIX..body]).map_err(|e| err(PREFIX + e.column().saturating_sub(1), format!("header: {e}")))?;
        let floats: usize = h.shapes.iter().map(|&(d, o)| d * o + o).sum();
        let end = body + 4 * floats;
        if bytes.len() < end {
            return Err(err(bytes.len(), format!("truncated weights: {} of {} bytes", bytes.len() - body, 4 * floats)));
        }
        if bytes.len() > end {
            return Err(err(end, "trailing bytes after weights".into()));
        }
        let mut vals = bytes[body..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let layers = h
            .shapes
            .iter()
            .map(|&(depth, out)| LayerParams {
                depth,
                out,
                w: vals.by_ref().take(depth * out).collect(),
                b: vals.by_ref().take(out).collect(),
            })
            .collect();
        let weights = FloatWeights {
            layers,
            act_max: h.act_max,
            rescale: h.rescale,
        };
        weights
            .check(&h.spec)
            .map_err(|e| err(PREFIX, format!("header does not match the network: {e}")))?;
        Ok(Checkpoint {
            spec: h.spec,
            weights,
            meta: h.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| NnError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
