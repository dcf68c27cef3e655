//! Software training: float forward/backward with optional fake
//! quantization (straight-through gradients) and tile-column dropout.

use cim_core::periphery::QuantConfig;
use cim_core::tile::TileGeometry;
use cim_core::variation::{stream_rng, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, N_CLASSES};
use crate::error::{NnError, Result};
use crate::infer::argmax;
use crate::mapping::dropped_columns;
use crate::network::{act_scale, FloatWeights, NetworkSpec, Op, WeightedLayer};
use crate::ops::{col2im_add, gemm, im2col, Mat, Pool};
use crate::quant::fake_quant_into;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay to zero over all steps.
    Cosine,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    Off,
    /// Zero `dropout_columns` pseudo-random columns of every tile slot per step.
    TileColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub schedule: LrSchedule,
    pub dropout: DropoutMode,
    pub dropout_columns: usize,
    pub quantization_aware: bool,
    /// Smoothing of the running activation maxima.
    pub act_ema: f32,
    /// Also evaluate the whole training set in inference mode after the
    /// last epoch (logged as split `train-eval`).
    pub final_train_eval: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::Cosine,
            dropout: DropoutMode::TileColumn,
            dropout_columns: 1,
            quantization_aware: true,
            act_ema: 0.9,
            final_train_eval: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NnError::input("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::input("learning_rate must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::input("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NnError::input("weight_decay must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.act_ema) {
            return Err(NnError::input("act_ema must lie in [0, 1)"));
        }
        if let LrSchedule::Step { every, gamma } = self.schedule {
            if every == 0 || !(gamma > 0.0 && gamma <= 1.0) {
                return Err(NnError::input("step schedule needs every >= 1 and gamma in (0, 1]"));
            }
        }
        if self.dropout == DropoutMode::TileColumn && self.dropout_columns == 0 {
            return Err(NnError::input("dropout_columns must be >= 1 with tile-column dropout"));
        }
        Ok(())
    }

    fn lr(&self, epoch: usize, step: usize, total: usize) -> f32 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = step as f32 / total.max(1) as f32;
                self.learning_rate * 0.5 * (1.0 + (std::f32::consts::PI * t).cos())
            }
            LrSchedule::Step { every, gamma } => self.learning_rate * gamma.powi((epoch / every) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
}

/// Per-epoch accuracy log. Split `train` is the running accuracy over the
/// epoch's training batches (dropout active), `test` and `train-eval` are
/// inference-mode passes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<LogRow>, _>>()
            .map_err(|e| NnError::input(format!("accuracy log: {e}")))?;
        Ok(TrainLog { rows })
    }

    /// Last row of `split`.
    pub fn last(&self, split: &str) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: FloatWeights,
    pub log: TrainLog,
}

/// Cached tensors of one weighted layer for the backward pass.
#[derive(Default)]
struct LayerCache {
    /// Float input before activation quantization.
    input: Vec<f32>,
    cols: Vec<f32>,
    /// Output after ReLU (pre-activation for the last layer).
    output: Vec<f32>,
}

struct Model<'a> {
    ops: Vec<Op>,
    wl: Vec<WeightedLayer>,
    quant: &'a QuantConfig,
    qat: bool,
}

/// Forward-pass knobs that differ between training and inference.
struct Pass<'a> {
    weights: &'a [Vec<f32>],
    biases: Vec<&'a [f32]>,
    act_max: Vec<f32>,
    /// Output factor per layer (1 during training).
    rescale: &'a [f32],
    /// Training only: update each layer's running input maximum from the
    /// batch before quantizing with it. Holds (observed flags, smoothing).
    track: Option<(&'a mut [bool], f32)>,
}

impl Model<'_> {
    fn new<'q>(spec: &NetworkSpec, quant: &'q QuantConfig, qat: bool) -> Result<Model<'q>> {
        Ok(Model {
            ops: spec.ops()?,
            wl: spec.weighted()?,
            quant,
            qat,
        })
    }

    /// Forward `x` (`b` images). With caches, stores what backward needs.
    fn forward(&self, mut x: Vec<f32>, b: usize, pass: &mut Pass, mut caches: Option<(&mut [LayerCache], &mut [Vec<u32>])>) -> Vec<f32> {
        let max_act = self.quant.max_activation();
        for (oi, op) in self.ops.iter().enumerate() {
            match *op {
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
                    let (ilen, olen) = (input.len(), output.len());
                    let mut y = vec![0.0f32; b * olen];
                    match caches.as_mut() {
                        Some((_, args)) => {
                            let arg = &mut args[oi];
                            arg.resize(b * olen, 0);
                            for i in 0..b {
                                pool.forward(&x[i * ilen..][..ilen], &mut y[i * olen..][..olen], Some(&mut arg[i * olen..][..olen]));
                            }
                        }
                        None => {
                            for i in 0..b {
                                pool.forward(&x[i * ilen..][..ilen], &mut y[i * olen..][..olen], None);
                            }
                        }
                    }
                    x = y;
                }
                Op::Weighted(n) => {
                    let l = &self.wl[n];
                    let g = &l.geom;
                    let (d, o, p) = (l.depth, l.out, g.patches());
                    let ilen = g.input.len();
                    if let (Some((seen, ema)), true) = (pass.track.as_mut(), n > 0) {
                        let m = x.iter().copied().fold(0.0f32, f32::max);
                        if seen[n] {
                            pass.act_max[n] = *ema * pass.act_max[n] + (1.0 - *ema) * m;
                        } else if m > 0.0 {
                            pass.act_max[n] = m;
                            seen[n] = true;
                        }
                    }
                    let mut q = x.clone();
                    if self.qat {
                        let s = act_scale(pass.act_max[n], max_act);
                        let clip = s * max_act as f32;
                        for v in &mut q {
                            *v = ((*v).clamp(0.0, clip) / s).round_ties_even() * s;
                        }
                    }
                    let mut cols = vec![0.0f32; b * p * d];
                    if g.kernel == 1 && g.pad == 0 && g.stride == 1 {
                        cols.copy_from_slice(&q);
                    } else {
                        for i in 0..b {
                            im2col(&q[i * ilen..][..ilen], g, &mut cols[i * p * d..][..p * d], d);
                        }
                    }
                    let mut y = vec![0.0f32; b * p * o];
                    gemm(Mat::new(&cols, b * p, d), Mat::new(&pass.weights[n], d, o), &mut y, 0.0);
                    let r = pass.rescale[n];
                    let bias = pass.biases[n];
                    let last = n + 1 == self.wl.len();
                    for row in y.chunks_exact_mut(o) {
                        for (v, &bb) in row.iter_mut().zip(bias) {
                            *v = *v * r + bb;
                            if !last && *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                    }
                    if let Some((lc, _)) = caches.as_mut() {
                        let c = &mut lc[n];
                        c.input = x;
                        c.cols = cols;
                        c.output = y.clone();
                    }
                    x = y;
                }
            }
        }
        x
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_xent(logits: &[f32], labels: &[u8]) -> (f64, Vec<f32>) {
    let b = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0f64;
    for (i, (z, &t)) in logits.chunks_exact(N_CLASSES).zip(labels).enumerate() {
        let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let e: Vec<f64> = z.iter().map(|&v| f64::from(v - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        loss += sum.ln() - f64::from(z[usize::from(t)] - m);
        for (c, g) in grad[i * N_CLASSES..][..N_CLASSES].iter_mut().enumerate() {
            let pc = e[c] / sum;
            *g = ((pc - f64::from(u8::from(c == usize::from(t)))) / b as f64) as f32;
        }
    }
    (loss / b as f64, grad)
}

fn batch_input(data: &Dataset, idx: &[usize]) -> Vec<f32> {
    let mut x = Vec::with_capacity(idx.len() * data.image_len());
    for &i in idx {
        x.extend(data.image(i).iter().map(|&p| f32::from(p) / 255.0));
    }
    x
}

fn effective_weights(w: &FloatWeights, quant: &QuantConfig, qat: bool) -> Vec<Vec<f32>> {
    w.layers
        .iter()
        .map(|l| {
            if qat {
                let mut q = vec![0.0; l.w.len()];
                fake_quant_into(&l.w, l.depth, l.out, quant.max_weight(), &mut q);
                q
            } else {
                l.w.clone()
            }
        })
        .collect()
}

/// Inference-mode accuracy and mean loss of float weights, with the same
/// fake quantization the weights were trained under.
pub fn evaluate(spec: &NetworkSpec, w: &FloatWeights, data: &Dataset, quant: &QuantConfig, qat: bool) -> Result<(f64, f64)> {
    w.check(spec)?;
    let model = Model::new(spec, quant, qat)?;
    let weights = effective_weights(w, quant, qat);
    let mut pass = Pass {
        weights: &weights,
        biases: w.layers.iter().map(|l| l.b.as_slice()).collect(),
        act_max: w.act_max.clone(),
        rescale: &w.rescale,
        track: None,
    };
    let (mut correct, mut loss) = (0usize, 0.0f64);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let logits = model.forward(batch_input(data, chunk), chunk.len(), &mut pass, None);
        let labels: Vec<u8> = chunk.iter().map(|&i| data.label(i)).collect();
        loss += softmax_xent(&logits, &labels).0 * chunk.len() as f64;
        correct += logits
            .chunks_exact(N_CLASSES)
            .zip(&labels)
            .filter(|(z, &t)| argmax(z) == usize::from(t))
            .count();
    }
    let n = data.len().max(1) as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Train from the seeded initialization. `on_row` sees each log row as it
/// is written.
pub fn train(
    spec: &NetworkSpec,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    quant: &QuantConfig,
    tile: &TileGeometry,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    quant.validate()?;
    tile.validate()?;
    let input = spec.input;
    for d in std::iter::once(data).chain(test) {
        if (d.height, d.width, d.channels) != (input.height, input.width, input.channels) {
            return Err(NnError::input(format!(
                "images are {}×{}×{}, the network expects {input}",
                d.height, d.width, d.channels
            )));
        }
    }
    let mut w = FloatWeights::init(spec, cfg.seed)?;
    let model = Model::new(spec, quant, cfg.quantization_aware)?;
    let n_layers = model.wl.len();
    let (slot_depth, slot_width) = (tile.n_rows * tile.n_layers, tile.n_cols);
    let dropout = cfg.dropout == DropoutMode::TileColumn;
    // The output layer feeds the classifier directly and keeps all columns.
    let slots: Vec<usize> = model.wl[..n_layers - 1]
        .iter()
        .map(|l| l.depth.div_ceil(slot_depth) * l.out.div_ceil(slot_width))
        .collect();
    if dropout {
        let keep = 1.0 - cfg.dropout_columns.min(slot_width) as f32 / slot_width as f32;
        for r in &mut w.rescale[..n_layers - 1] {
            *r = keep;
        }
    }
    let mut seen = vec![false; n_layers];
    seen[0] = true;
    let mut vel: Vec<(Vec<f32>, Vec<f32>)> = w.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.out])).collect();
    let mut log = TrainLog::default();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let ones = vec![1.0f32; n_layers];
    let mut caches: Vec<LayerCache> = (0..n_layers).map(|_| LayerCache::default()).collect();
    let mut args: Vec<Vec<u32>> = vec![Vec::new(); model.ops.len()];

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let (mut correct, mut loss_sum) = (0usize, 0.0f64);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + bi;
            let b = idx.len();
            let x = batch_input(data, idx);
            let labels: Vec<u8> = idx.iter().map(|&i| data.label(i)).collect();

            let mut weff = effective_weights(&w, quant, cfg.quantization_aware);
            let dropped = if dropout {
                let cols = dropped_columns(cfg.seed, step as u64, &slots, slot_width, cfg.dropout_columns);
                for (n, per_slot) in cols.iter().enumerate() {
                    zero_dropped(&mut weff[n], &model.wl[n], per_slot, slot_depth, slot_width);
                }
                Some(cols)
            } else {
                None
            };

            let logits = {
                let mut pass = Pass {
                    weights: &weff,
                    biases: w.layers.iter().map(|l| l.b.as_slice()).collect(),
                    act_max: w.act_max.clone(),
                    rescale: &ones,
                    track: Some((&mut seen, cfg.act_ema)),
                };
                let logits = model.forward(x, b, &mut pass, Some((&mut caches, &mut args)));
                w.act_max = pass.act_max;
                logits
            };
            let (loss, dlogits) = softmax_xent(&logits, &labels);
            if !loss.is_finite() {
                return Err(NnError::Diverged {
                    epoch,
                    step,
                    loss: loss as f32,
                    log,
                });
            }
            loss_sum += loss * b as f64;
            correct += logits
                .chunks_exact(N_CLASSES)
                .zip(&labels)
                .filter(|(z, &t)| argmax(z) == usize::from(t))
                .count();

            let mut grads = backward(&model, dlogits, b, &weff, &w.act_max, &caches, &args);
            if let Some(cols) = &dropped {
                for (n, per_slot) in cols.iter().enumerate() {
                    zero_dropped(&mut grads[n].0, &model.wl[n], per_slot, slot_depth, slot_width);
                }
            }
            let lr = cfg.lr(epoch, step, total);
            for ((p, v), (gw, gb)) in w.layers.iter_mut().zip(&mut vel).zip(&grads) {
                for ((wv, vv), &g) in p.w.iter_mut().zip(&mut v.0).zip(gw) {
                    *vv = cfg.momentum * *vv + g + cfg.weight_decay * *wv;
                    *wv -= lr * *vv;
                }
                for ((bv, vv), &g) in p.b.iter_mut().zip(&mut v.1).zip(gb) {
                    *vv = cfg.momentum * *vv + g;
                    *bv -= lr * *vv;
                }
            }
        }
        let n = data.len().max(1) as f64;
        let mut rows = vec![LogRow {
            epoch: epoch + 1,
            split: "train".into(),
            accuracy: correct as f64 / n,
            loss: loss_sum / n,
        }];
        if let Some(t) = test {
            let (acc, loss) = evaluate(spec, &w, t, quant, cfg.quantization_aware)?;
            rows.push(LogRow {
                epoch: epoch + 1,
                split: "test".into(),
                accuracy: acc,
                loss,
            });
        }
        if cfg.final_train_eval && epoch + 1 == cfg.epochs {
            let (acc, loss) = evaluate(spec, &w, data, quant, cfg.quantization_aware)?;
            rows.push(LogRow {
                epoch: epoch + 1,
                split: "train-eval".into(),
                accuracy: acc,
                loss,
            });
        }
        for r in rows {
            on_row(&r);
            log.rows.push(r);
        }
    }
    Ok(TrainOutcome { weights: w, log })
}

/// Zero the dropped columns of every slot in a `depth × out` matrix.
fn zero_dropped(m: &mut [f32], l: &WeightedLayer, per_slot: &[Vec<usize>], slot_depth: usize, slot_width: usize) {
    let cb = l.out.div_ceil(slot_width);
    for (s, cols) in per_slot.iter().enumerate() {
        let (r, c) = (s / cb, s % cb);
        for &d in cols {
            let col = c * slot_width + d;
            if col >= l.out {
                continue;
            }
            for k in r * slot_depth..((r + 1) * slot_depth).min(l.depth) {
                m[k * l.out + col] = 0.0;
            }
        }
    }
}

/// Gradients `(dW, db)` of every weighted layer.
fn backward(
    model: &Model,
    dlogits: Vec<f32>,
    b: usize,
    weff: &[Vec<f32>],
    act_max: &[f32],
    caches: &[LayerCache],
    args: &[Vec<u32>],
) -> Vec<(Vec<f32>, Vec<f32>)> {
    let n_layers = model.wl.len();
    let max_act = model.quant.max_activation();
    let mut grads: Vec<(Vec<f32>, Vec<f32>)> = vec![(Vec::new(), Vec::new()); n_layers];
    let mut dy = dlogits;
    for (oi, op) in model.ops.iter().enumerate().rev() {
        match *op {
            Op::MaxPool { input, output, .. } => {
                let (ilen, olen) = (input.len(), output.len());
                let mut dx = vec![0.0f32; b * ilen];
                for i in 0..b {
                    let a = &args[oi][i * olen..][..olen];
                    let g = &dy[i * olen..][..olen];
                    let d = &mut dx[i * ilen..][..ilen];
                    for (&j, &v) in a.iter().zip(g) {
                        d[j as usize] += v;
                    }
                }
                dy = dx;
            }
            Op::Weighted(n) => {
                let l = &model.wl[n];
                let g = &l.geom;
                let (d, o, p) = (l.depth, l.out, g.patches());
                let c = &caches[n];
                if n + 1 < n_layers {
                    for (v, &y) in dy.iter_mut().zip(&c.output) {
                        if y <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                let mut gw = vec![0.0f32; d * o];
                gemm(Mat::new(&c.cols, b * p, d).t(), Mat::new(&dy, b * p, o), &mut gw, 0.0);
                let mut gb = vec![0.0f32; o];
                for row in dy.chunks_exact(o) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                grads[n] = (gw, gb);
                if n == 0 {
                    break;
                }
                let mut dcols = vec![0.0f32; b * p * d];
                gemm(Mat::new(&dy, b * p, o), Mat::new(&weff[n], d, o).t(), &mut dcols, 0.0);
                let ilen = g.input.len();
                let mut dx = if g.kernel == 1 && g.pad == 0 && g.stride == 1 {
                    dcols
                } else {
                    let mut dx = vec![0.0f32; b * ilen];
                    for i in 0..b {
                        col2im_add(&dcols[i * p * d..][..p * d], g, &mut dx[i * ilen..][..ilen]);
                    }
                    dx
                };
                if model.qat {
                    let clip = act_scale(act_max[n], max_act) * max_act as f32;
                    for (v, &x) in dx.iter_mut().zip(&c.input) {
                        if x > clip {
                            *v = 0.0;
                        }
                    }
                }
                dy = dx;
            }
        }
    }
    grads
}
