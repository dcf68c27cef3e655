//! Fixed-point inference: the software reference and the analog tile
//! pipeline share one layer-major driver and differ only in how a layer's
//! integer dot products are produced.

use cim_core::periphery::{AdcCalibration, AdcHistogram};
use cim_core::pipeline::{unit_current, ReadMode, SlotCurrents, SlotLut};
use cim_core::variation::{stream_rng, Stream, VariationSpec};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, N_CLASSES};
use crate::error::{NnError, Result};
use crate::mapping::MappedNetwork;
use crate::network::{ConvGeom, Op};
use crate::ops::{gemm, im2col, Mat, Pool};
use crate::quant::{act_code, QuantizedNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub mode: ReadMode,
    pub variation: VariationSpec,
    /// Images whose activations calibrate each layer's ADC range.
    pub calibration_images: usize,
    /// Patches sampled per layer from those images.
    pub calibration_patches: usize,
    /// Seed of the calibration sampling.
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            mode: ReadMode::Ideal,
            variation: VariationSpec::none(),
            calibration_images: 64,
            calibration_patches: 256,
            seed: 0,
        }
    }
}

/// Per-layer ADC setting and saturation count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub tiles: usize,
    pub lsb_units: u32,
    pub full_scale: f64,
    pub quantile_current: f64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub n_images: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<u8>,
    pub logits: Vec<[f32; N_CLASSES]>,
    pub saturations: u64,
    pub layers: Vec<LayerStats>,
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl InferenceReport {
    fn new(labels: &[u8], logits: Vec<[f32; N_CLASSES]>, layers: Vec<LayerStats>) -> Self {
        let mut confusion = vec![vec![0u64; N_CLASSES]; N_CLASSES];
        let predictions: Vec<u8> = logits.iter().map(|l| argmax(l) as u8).collect();
        let mut correct = 0;
        for (&t, &p) in labels.iter().zip(&predictions) {
            confusion[usize::from(t)][usize::from(p)] += 1;
            correct += usize::from(t == p);
        }
        let n = labels.len();
        InferenceReport {
            n_images: n,
            correct,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            confusion,
            predictions,
            logits,
            saturations: layers.iter().map(|l| l.saturations).sum(),
            layers,
        }
    }

    /// `true,predicted,count` rows.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true,predicted,count\n");
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, n) in row.iter().enumerate() {
                s.push_str(&format!("{t},{p},{n}\n"));
            }
        }
        s
    }
}

/// Produces a layer's integer sums for a batch of unrolled patches.
trait LayerEngine: Sync {
    /// Entries per patch row (depth, possibly padded).
    fn row_len(&self) -> usize;
    /// `out` is `n × width` sums; returns saturated ADC samples.
    fn mac(&self, patches: &[u8], n: usize, out: &mut [i32]) -> u64;
}

/// Exact integer products through f32 GEMM. Sums stay below 2^24 when
/// `depth · max_act · max_weight` does, so every partial sum is exact.
struct SoftwareLayer {
    depth: usize,
    out: usize,
    w: Vec<f32>,
    codes: Vec<i8>,
    exact_f32: bool,
}

impl SoftwareLayer {
    fn new(net: &QuantizedNetwork, layer: usize) -> Self {
        let q = &net.layers[layer].weights;
        let bound = q.depth as u64 * u64::from(net.quant.max_activation()) * net.quant.max_weight() as u64;
        SoftwareLayer {
            depth: q.depth,
            out: q.out,
            w: q.codes.iter().map(|&c| f32::from(c)).collect(),
            codes: q.codes.clone(),
            exact_f32: bound < (1 << 24),
        }
    }
}

impl LayerEngine for SoftwareLayer {
    fn row_len(&self) -> usize {
        self.depth
    }

    fn mac(&self, patches: &[u8], n: usize, out: &mut [i32]) -> u64 {
        if self.exact_f32 {
            let a: Vec<f32> = patches.iter().map(|&x| f32::from(x)).collect();
            let mut c = vec![0.0f32; n * self.out];
            gemm(Mat::new(&a, n, self.depth), Mat::new(&self.w, self.depth, self.out), &mut c, 0.0);
            for (o, v) in out.iter_mut().zip(c) {
                *o = v as i32;
            }
        } else {
            out.fill(0);
            for (p, row) in patches.chunks_exact(self.depth).enumerate() {
                let acc = &mut out[p * self.out..(p + 1) * self.out];
                for (k, &x) in row.iter().enumerate().filter(|(_, &x)| x != 0) {
                    for (a, &w) in acc.iter_mut().zip(&self.codes[k * self.out..(k + 1) * self.out]) {
                        *a += i32::from(x) * i32::from(w);
                    }
                }
            }
        }
        0
    }
}

/// Tile-backed layer: one mask table per slot.
struct AnalogLayer {
    row_len: usize,
    out: usize,
    slot_depth: usize,
    /// (row block, first column, table)
    slots: Vec<(usize, usize, SlotLut)>,
    byte_path: bool,
    act_bits: u32,
}

impl LayerEngine for AnalogLayer {
    fn row_len(&self) -> usize {
        self.row_len
    }

    fn mac(&self, patches: &[u8], n: usize, out: &mut [i32]) -> u64 {
        out.fill(0);
        let mut sat = 0;
        let mut wide = Vec::new();
        for p in 0..n {
            let row = &patches[p * self.row_len..(p + 1) * self.row_len];
            let acc = &mut out[p * self.out..(p + 1) * self.out];
            for (b, c0, lut) in &self.slots {
                let acts = &row[b * self.slot_depth..(b + 1) * self.slot_depth];
                let dst = &mut acc[*c0..c0 + lut.width()];
                if self.byte_path {
                    sat += lut.accumulate_u8(acts, dst);
                } else {
                    let a: Vec<u32> = acts[..lut.depth()].iter().map(|&x| u32::from(x)).collect();
                    wide.clear();
                    wide.resize(lut.width(), 0i64);
                    sat += lut.accumulate(&a, self.act_bits, &mut wide).expect("slot-shaped activations");
                    for (d, &v) in dst.iter_mut().zip(&wide) {
                        *d += v as i32;
                    }
                }
            }
        }
        sat
    }
}

fn check_input(net: &QuantizedNetwork, data: &Dataset) -> Result<()> {
    let s = net.spec.input;
    if (data.height, data.width, data.channels) != (s.height, s.width, s.channels) {
        return Err(NnError::input(format!(
            "images are {}×{}×{}, the network expects {s}",
            data.height, data.width, data.channels
        )));
    }
    Ok(())
}

fn unroll(acts: &[u8], g: &ConvGeom, row_len: usize) -> Vec<u8> {
    let mut cols = vec![0u8; g.patches() * row_len];
    im2col(acts, g, &mut cols, row_len);
    cols
}

/// Run `images` layer by layer. `prepare(layer, activations)` builds the
/// engine for a weighted layer from the current activations of all images.
/// Returns logits and saturation counts `[layer][image]`.
fn run<P>(net: &QuantizedNetwork, images: &Dataset, mut prepare: P) -> Result<(Vec<[f32; N_CLASSES]>, Vec<Vec<u64>>)>
where
    P: FnMut(usize, &[Vec<u8>]) -> Result<Box<dyn LayerEngine>>,
{
    check_input(net, images)?;
    let wl = net.spec.weighted()?;
    let max_act = net.quant.max_activation();
    let mut acts: Vec<Vec<u8>> = (0..images.len()).map(|i| images.image(i).to_vec()).collect();
    let mut logits = vec![[0.0f32; N_CLASSES]; images.len()];
    let mut sats = vec![Vec::new(); wl.len()];
    for op in net.spec.ops()? {
        match op {
            Op::MaxPool {
                input,
                size,
                stride,
                output,
            } => {
                let pool = Pool {
                    h: input.height,
                    w: input.width,
                    c: input.channels,
                    size,
                    stride,
                    out_h: output.height,
                    out_w: output.width,
                };
                acts.par_iter_mut().for_each(|a| {
                    let mut y = vec![0u8; output.len()];
                    pool.forward(a, &mut y, None);
                    *a = y;
                });
            }
            Op::Weighted(n) => {
                let engine = prepare(n, &acts)?;
                let l = &wl[n];
                let q = &net.layers[n];
                let last = n + 1 == wl.len();
                let next_scale = if last { 0.0 } else { net.layers[n + 1].in_scale };
                let out = l.out;
                sats[n] = acts
                    .par_iter_mut()
                    .zip(logits.par_iter_mut())
                    .map(|(a, lg)| {
                        let cols = unroll(a, &l.geom, engine.row_len());
                        let np = l.geom.patches();
                        let mut acc = vec![0i32; np * out];
                        let s = engine.mac(&cols, np, &mut acc);
                        if last {
                            for (c, v) in lg.iter_mut().enumerate() {
                                *v = q.output(c, acc[c]);
                            }
                            a.clear();
                        } else {
                            *a = acc
                                .iter()
                                .enumerate()
                                .map(|(i, &x)| act_code(q.output(i % out, x).max(0.0), next_scale, max_act))
                                .collect();
                        }
                        s
                    })
                    .collect();
            }
        }
    }
    Ok((logits, sats))
}

/// Software fixed-point forward pass: integer weights and activation codes,
/// the same float post-processing as the analog pipeline.
pub fn infer_software(net: &QuantizedNetwork, data: &Dataset) -> Result<InferenceReport> {
    let (logits, _) = run(net, data, |n, _| Ok(Box::new(SoftwareLayer::new(net, n))))?;
    let layers = (0..net.layers.len())
        .map(|layer| LayerStats {
            layer,
            tiles: 0,
            lsb_units: 0,
            full_scale: 0.0,
            quantile_current: 0.0,
            saturations: 0,
        })
        .collect();
    Ok(InferenceReport::new(data.labels(), logits, layers))
}

/// Analog inference through programmed tiles. Device variation is drawn once
/// per tile for the whole run. The first `cfg.calibration_images` images of
/// `calibration` set each layer's ADC range before `data` is evaluated.
pub fn infer(mapped: &MappedNetwork, data: &Dataset, calibration: &Dataset, cfg: &InferConfig) -> Result<InferenceReport> {
    mapped.check()?;
    cfg.variation.validate()?;
    let net = &mapped.net;
    check_input(net, calibration)?;
    let quant = *mapped.quant();
    check_input(net, data)?;
    let n_cal = cfg.calibration_images.min(calibration.len());
    let all = {
        let mut px = Vec::with_capacity((n_cal + data.len()) * data.image_len());
        let mut lb = Vec::with_capacity(n_cal + data.len());
        for (d, n) in [(calibration, n_cal), (data, data.len())] {
            for i in 0..n {
                px.extend_from_slice(d.image(i));
                lb.push(d.label(i));
            }
        }
        Dataset::new(data.height, data.width, data.channels, px, lb)?
    };
    let unit = unit_current(&mapped.template, &quant, mapped.scheme)?;
    let g = mapped.template.geometry;
    let wl = net.spec.weighted()?;
    let mut stats = Vec::with_capacity(wl.len());
    let (logits, sats) = run(net, &all, |n, acts| {
        let m = &mapped.layers[n];
        let row_len = m.row_blocks() * m.slot_depth;
        // Calibration patches: a fixed sample of the calibration images' rows.
        let mut cal_rows: Vec<u8> = Vec::new();
        for a in &acts[..n_cal] {
            cal_rows.extend(unroll(a, &wl[n].geom, row_len));
        }
        let total = cal_rows.len() / row_len;
        let picked: Vec<usize> = if total <= cfg.calibration_patches {
            (0..total).collect()
        } else {
            let mut rng = stream_rng(cfg.seed, Stream::Calibration, n as u64);
            let mut v = sample(&mut rng, total, cfg.calibration_patches).into_vec();
            v.sort_unstable();
            v
        };
        let built = (0..m.assignments.len())
            .into_par_iter()
            .map(|s| {
                let a = &m.assignments[s];
                let slot = mapped.program(n, s, &cfg.variation)?;
                let currents = SlotCurrents::build(&slot, &quant, cfg.mode)?;
                drop(slot);
                let mut hist = AdcHistogram::new(unit, &quant)?;
                let start = a.row_block * m.slot_depth;
                for &p in &picked {
                    let row = &cal_rows[p * row_len + start..p * row_len + start + a.rows.len()];
                    let acts: Vec<u32> = row.iter().map(|&x| u32::from(x)).collect();
                    currents.for_each_read(&acts, quant.act_bits, |i| hist.push(i))?;
                }
                Ok((currents, hist))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut hist = AdcHistogram::new(unit, &quant)?;
        for (_, h) in &built {
            hist.merge(h);
        }
        let cal: AdcCalibration = hist.calibrate(&quant);
        let slots = built
            .into_par_iter()
            .enumerate()
            .map(|(s, (currents, _))| {
                let a = &m.assignments[s];
                Ok((a.row_block, a.cols.start, SlotLut::build(&currents, &quant, &cal)?))
            })
            .collect::<Result<Vec<_>>>()?;
        stats.push(LayerStats {
            layer: n,
            tiles: m.n_tiles(),
            lsb_units: cal.lsb_units,
            full_scale: cal.full_scale,
            quantile_current: cal.quantile_current,
            saturations: 0,
        });
        Ok(Box::new(AnalogLayer {
            row_len,
            out: m.out,
            slot_depth: m.slot_depth,
            slots,
            byte_path: g.n_rows == 8 && quant.act_bits <= 8,
            act_bits: quant.act_bits,
        }))
    })?;
    for (s, per_image) in stats.iter_mut().zip(sats) {
        s.saturations = per_image[n_cal..].iter().sum();
    }
    let logits = logits[n_cal..].to_vec();
    Ok(InferenceReport::new(data.labels(), logits, stats))
}
