//! Symmetric per-channel weight quantization and the fixed-point network.

use cim_core::periphery::QuantConfig;

use crate::error::{NnError, Result};
use crate::network::{FloatWeights, NetworkSpec};

/// Integer codes of one `depth × out` layer and the per-output-channel step.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub depth: usize,
    pub out: usize,
    /// Row-major, each in `-max_code..=max_code`.
    pub codes: Vec<i8>,
    pub scales: Vec<f32>,
}

impl QuantizedLayer {
    pub fn dequantize(&self) -> Vec<f32> {
        self.codes
            .iter()
            .enumerate()
            .map(|(i, &q)| f32::from(q) * self.scales[i % self.out])
            .collect()
    }
}

/// Step `max|w|/max_code` per column; an all-zero column uses step 1.
pub fn channel_scales(w: &[f32], depth: usize, out: usize, max_code: i32) -> Vec<f32> {
    let mut m = vec![0.0f32; out];
    for row in w.chunks_exact(out).take(depth) {
        for (m, &v) in m.iter_mut().zip(row) {
            *m = m.max(v.abs());
        }
    }
    m.into_iter()
        .map(|m| if m > 0.0 { m / max_code as f32 } else { 1.0 })
        .collect()
}

#[inline]
pub fn quantize_value(w: f32, scale: f32, max_code: i32) -> i8 {
    let m = max_code as f32;
    (w / scale).round_ties_even().clamp(-m, m) as i8
}

pub fn quantize_layer(w: &[f32], depth: usize, out: usize, max_code: i32) -> QuantizedLayer {
    let scales = channel_scales(w, depth, out, max_code);
    let codes = w
        .iter()
        .enumerate()
        .map(|(i, &v)| quantize_value(v, scales[i % out], max_code))
        .collect();
    QuantizedLayer {
        depth,
        out,
        codes,
        scales,
    }
}

/// Quantize-dequantize into `dst` (the forward weights of fake quantization).
pub fn fake_quant_into(w: &[f32], depth: usize, out: usize, max_code: i32, dst: &mut [f32]) {
    let scales = channel_scales(w, depth, out, max_code);
    for (i, (d, &v)) in dst.iter_mut().zip(w).enumerate() {
        let s = scales[i % out];
        *d = f32::from(quantize_value(v, s, max_code)) * s;
    }
}

/// Activation code of `x` for step `scale`.
#[inline]
pub fn act_code(x: f32, scale: f32, max_code: u32) -> u8 {
    (x / scale).round_ties_even().clamp(0.0, max_code as f32) as u8
}

pub fn quantize_weights(w: &FloatWeights, cfg: &QuantConfig) -> Result<Vec<QuantizedLayer>> {
    cfg.validate()?;
    let m = cfg.max_weight();
    if m > i32::from(i8::MAX) {
        return Err(NnError::input(format!("{} weight bits do not fit 8-bit codes", cfg.weight_bits)));
    }
    Ok(w.layers.iter().map(|l| quantize_layer(&l.w, l.depth, l.out, m)).collect())
}

/// One weighted layer of the fixed-point network.
#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub weights: QuantizedLayer,
    pub bias: Vec<f32>,
    /// Step of this layer's input activation codes.
    pub in_scale: f32,
    /// Per-channel factor from integer sums to float outputs.
    pub multiplier: Vec<f32>,
}

impl QLayer {
    /// Float output of channel `c` for integer sum `acc`.
    #[inline]
    pub fn output(&self, c: usize, acc: i32) -> f32 {
        acc as f32 * self.multiplier[c] + self.bias[c]
    }
}

/// Network with integer weights and fixed activation steps: the model that
/// both the software reference and the analog pipeline execute.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<QLayer>,
    pub quant: QuantConfig,
}

impl QuantizedNetwork {
    pub fn new(spec: &NetworkSpec, w: &FloatWeights, cfg: &QuantConfig) -> Result<Self> {
        w.check(spec)?;
        if cfg.act_bits > 8 {
            return Err(NnError::input(format!(
                "network inference carries activations as bytes; act_bits {} > 8",
                cfg.act_bits
            )));
        }
        let max_act = cfg.max_activation();
        let q = quantize_weights(w, cfg)?;
        let layers = q
            .into_iter()
            .enumerate()
            .map(|(i, weights)| {
                let in_scale = w.act_scale(i, max_act);
                let rescale = w.rescale[i];
                QLayer {
                    multiplier: weights.scales.iter().map(|&s| in_scale * s * rescale).collect(),
                    bias: w.layers[i].b.clone(),
                    in_scale,
                    weights,
                }
            })
            .collect();
        Ok(QuantizedNetwork {
            spec: spec.clone(),
            layers,
            quant: *cfg,
        })
    }
}
