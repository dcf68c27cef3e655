//! Behavioral periphery: bit-serial input slices, 4-bit SAR ADC, shift-add
//! accumulation and ReLU.
//!
//! Signed weights are stored as magnitudes on a differential pair of planes
//! (positive and negative) and the magnitude is split into slices of
//! `log2(levels_per_device)` bits, one device per slice.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub act_bits: u32,
    pub weight_bits: u32,
    pub adc_bits: u32,
    /// ADC input range (A); LSB = adc_full_scale / 2^adc_bits.
    pub adc_full_scale: f64,
    /// Nominal RRAM levels used per weight slice (power of two).
    pub levels_per_device: u32,
    /// Rows driven per ADC sample; `None` picks the largest count whose
    /// worst-case column sum still fits the code range.
    pub rows_per_read: Option<usize>,
    /// Quantile of calibration currents the ADC range must cover.
    pub adc_calibration_quantile: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig::two_bit_slices()
    }
}

/// Named slicing presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlicePreset {
    TwoBit,
    OneBit,
}

impl QuantConfig {
    /// 8b activations, 4b weights, two 2-bit slices per magnitude.
    pub fn two_bit_slices() -> Self {
        QuantConfig {
            act_bits: 8,
            weight_bits: 4,
            adc_bits: 4,
            adc_full_scale: 16e-6,
            levels_per_device: 4,
            rows_per_read: None,
            adc_calibration_quantile: 0.999,
        }
    }

    /// 8b activations, 4b weights, one bit per device.
    pub fn one_bit_slices() -> Self {
        QuantConfig {
            levels_per_device: 2,
            ..QuantConfig::two_bit_slices()
        }
    }

    pub fn preset(p: SlicePreset) -> Self {
        match p {
            SlicePreset::TwoBit => QuantConfig::two_bit_slices(),
            SlicePreset::OneBit => QuantConfig::one_bit_slices(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.act_bits) {
            return Err(CimError::param("act_bits", "must lie in 1..=16"));
        }
        if !(2..=8).contains(&self.weight_bits) {
            return Err(CimError::param("weight_bits", "must lie in 2..=8"));
        }
        if self.adc_bits != 4 {
            return Err(CimError::param("adc_bits", "the SAR ADC is fixed at 4 bits"));
        }
        if !(self.adc_full_scale > 0.0 && self.adc_full_scale.is_finite()) {
            return Err(CimError::param("adc_full_scale", "must be finite and > 0"));
        }
        if self.levels_per_device < 2 || !self.levels_per_device.is_power_of_two() {
            return Err(CimError::param("levels_per_device", "must be a power of two >= 2"));
        }
        if self.rows_per_read == Some(0) {
            return Err(CimError::param("rows_per_read", "must be >= 1"));
        }
        if !(self.adc_calibration_quantile > 0.0 && self.adc_calibration_quantile <= 1.0) {
            return Err(CimError::param("adc_calibration_quantile", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u32 {
        (1 << self.adc_bits) - 1
    }

    pub fn lsb(&self) -> f64 {
        self.adc_full_scale / f64::from(1u32 << self.adc_bits)
    }

    /// Largest representable weight magnitude.
    pub fn max_weight(&self) -> i32 {
        (1 << (self.weight_bits - 1)) - 1
    }

    pub fn max_activation(&self) -> u32 {
        (1 << self.act_bits) - 1
    }

    pub fn bits_per_slice(&self) -> u32 {
        self.levels_per_device.trailing_zeros()
    }

    pub fn n_slices(&self) -> usize {
        (self.weight_bits - 1).div_ceil(self.bits_per_slice()) as usize
    }

    /// Scale factor of slice `s`: 2^(s · bits_per_slice).
    pub fn slice_weights(&self) -> Vec<i64> {
        (0..self.n_slices())
            .map(|s| 1i64 << (s as u32 * self.bits_per_slice()))
            .collect()
    }

    /// Largest value any slice takes.
    pub fn max_slice_value(&self) -> u32 {
        let bps = self.bits_per_slice();
        let mag = self.max_weight() as u32;
        (0..self.n_slices() as u32)
            .map(|s| (mag >> (s * bps)) & (self.levels_per_device - 1))
            .max()
            .unwrap_or(0)
    }

    /// Rows per ADC sample for a tile with `n_rows` rows.
    pub fn effective_rows_per_read(&self, n_rows: usize) -> usize {
        match self.rows_per_read {
            Some(r) => r.min(n_rows),
            None => {
                let per_row = self.max_slice_value().max(1) as usize;
                (self.max_code() as usize / per_row).clamp(1, n_rows)
            }
        }
    }

    /// Device level encoding slice value `v`, given `n_levels` nominal levels.
    pub fn slice_level(&self, v: u32, n_levels: usize) -> Result<usize> {
        if v >= self.levels_per_device {
            return Err(CimError::input(format!("slice value {v} exceeds the device range")));
        }
        let step = (n_levels - 1) / (self.levels_per_device as usize - 1);
        if step == 0 {
            return Err(CimError::param("levels_per_device", "exceeds the RRAM level count"));
        }
        Ok(v as usize * step)
    }

    /// Level step between adjacent slice values.
    pub fn level_step(&self, n_levels: usize) -> usize {
        (n_levels - 1) / (self.levels_per_device as usize - 1)
    }

    /// Split a signed weight into (is_negative, slice values LSB first).
    pub fn split_weight(&self, w: i32) -> Result<(bool, Vec<u32>)> {
        let m = self.max_weight();
        if w < -m || w > m {
            return Err(CimError::input(format!("weight {w} outside ±{m}")));
        }
        let mag = w.unsigned_abs();
        let bps = self.bits_per_slice();
        let mask = self.levels_per_device - 1;
        Ok((
            w < 0,
            (0..self.n_slices() as u32).map(|s| (mag >> (s * bps)) & mask).collect(),
        ))
    }

    /// Inverse of [`split_weight`](Self::split_weight).
    pub fn join_weight(&self, negative: bool, slices: &[u32]) -> i32 {
        let bps = self.bits_per_slice();
        let mag: u32 = slices.iter().enumerate().map(|(s, &v)| v << (s as u32 * bps)).sum();
        if negative {
            -(mag as i32)
        } else {
            mag as i32
        }
    }
}

/// Successive-approximation conversion: floor(clamp(i, 0, FS) / LSB), capped at 15.
pub fn sar_adc(i: f64, cfg: &QuantConfig) -> Result<u32> {
    if i.is_nan() || i < 0.0 {
        return Err(CimError::input(format!("ADC input must be >= 0, got {i}")));
    }
    Ok(sar_search(i, cfg.lsb(), cfg.adc_bits))
}

#[inline]
fn sar_search(i: f64, lsb: f64, bits: u32) -> u32 {
    let mut code = 0u32;
    for b in (0..bits).rev() {
        let trial = code | (1 << b);
        if i >= f64::from(trial) * lsb {
            code = trial;
        }
    }
    code
}

/// Mid-tread conversion used by the MAC pipeline: half an LSB of offset so
/// codes round to the nearest level. Also reports whether the input lay
/// beyond the top code's decision range.
#[inline]
pub fn convert(i: f64, cfg: &QuantConfig) -> (u32, bool) {
    let lsb = cfg.lsb();
    let shifted = i.max(0.0) + 0.5 * lsb;
    let code = sar_search(shifted, lsb, cfg.adc_bits);
    (code, shifted >= f64::from(cfg.max_code() + 1) * lsb)
}

/// `I,code` transfer curve over [0, 1.25·FS] with `n` points.
pub fn adc_transfer_csv(cfg: &QuantConfig, n: usize) -> Result<String> {
    cfg.validate()?;
    let mut out = String::from("I,code\n");
    let hi = 1.25 * cfg.adc_full_scale;
    for k in 0..n {
        let i = if n == 1 { 0.0 } else { hi * k as f64 / (n - 1) as f64 };
        let _ = writeln!(out, "{i},{}", sar_adc(i, cfg)?);
    }
    Ok(out)
}

/// Bit slices of one activation, LSB first.
pub fn bit_serial_schedule(activation: u32, act_bits: u32) -> Result<Vec<bool>> {
    if act_bits == 0 || act_bits > 31 {
        return Err(CimError::param("act_bits", "must lie in 1..=31"));
    }
    if activation >> act_bits != 0 {
        return Err(CimError::input(format!(
            "activation {activation} does not fit in {act_bits} bits"
        )));
    }
    Ok((0..act_bits).map(|b| (activation >> b) & 1 == 1).collect())
}

/// Input-bit vectors for a row of activations: `out[b][row]`.
pub fn bit_serial_rows(activations: &[u32], act_bits: u32) -> Result<Vec<Vec<bool>>> {
    let per_row = activations
        .iter()
        .map(|&a| bit_serial_schedule(a, act_bits))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..act_bits as usize)
        .map(|b| per_row.iter().map(|bits| bits[b]).collect())
        .collect())
}

/// Σ slice_b · 2^b.
pub fn reassemble(bits: &[bool]) -> u32 {
    bits.iter()
        .enumerate()
        .map(|(b, &on)| u32::from(on) << b)
        .sum()
}

/// ADC codes of one differential sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiffCode {
    pub pos: u32,
    pub neg: u32,
}

/// Σ_b Σ_s (pos − neg) · 2^b · slice_weights[s], for `codes[b][s]`.
pub fn shift_add_accumulate(codes: &[Vec<DiffCode>], cfg: &QuantConfig, slice_weights: &[i64]) -> Result<i64> {
    if codes.len() != cfg.act_bits as usize {
        return Err(CimError::input(format!(
            "{} bit rows for {} activation bits",
            codes.len(),
            cfg.act_bits
        )));
    }
    let mut acc = 0i64;
    for (b, row) in codes.iter().enumerate() {
        if row.len() != slice_weights.len() {
            return Err(CimError::input(format!(
                "bit {b}: {} slice codes for {} slices",
                row.len(),
                slice_weights.len()
            )));
        }
        let mut partial = 0i64;
        for (c, &w) in row.iter().zip(slice_weights) {
            partial += (i64::from(c.pos) - i64::from(c.neg)) * w;
        }
        acc += partial << b;
    }
    Ok(acc)
}

#[inline]
pub fn relu<T: PartialOrd + Default>(x: T) -> T {
    if x > T::default() {
        x
    } else {
        T::default()
    }
}

/// Outcome of range calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcCalibration {
    /// LSB as a multiple of the unit current.
    pub lsb_units: u32,
    pub full_scale: f64,
    /// Current at the calibration quantile.
    pub quantile_current: f64,
}

/// Pick the ADC range for a set of sampled column currents.
///
/// The LSB is snapped to an integer multiple of `unit` (the current of one
/// slice step) so digital reconstruction stays integral; the range covers the
/// configured quantile of `samples`.
pub fn calibrate_adc(samples: &mut [f64], unit: f64, cfg: &QuantConfig) -> Result<AdcCalibration> {
    cfg.validate()?;
    if !(unit > 0.0 && unit.is_finite()) {
        return Err(CimError::input("unit current must be finite and > 0"));
    }
    let q = if samples.is_empty() {
        0.0
    } else {
        let k = ((samples.len() as f64 * cfg.adc_calibration_quantile).ceil() as usize)
            .clamp(1, samples.len())
            - 1;
        let (_, v, _) = samples.select_nth_unstable_by(k, f64::total_cmp);
        *v
    };
    let codes = f64::from(1u32 << cfg.adc_bits);
    let lsb_units = ((q / (codes * unit)).ceil() as u32).max(1);
    Ok(AdcCalibration {
        lsb_units,
        full_scale: codes * unit * f64::from(lsb_units),
        quantile_current: q,
    })
}

/// Streaming form of [`calibrate_adc`] for sample counts too large to keep.
///
/// Each sample is reduced to the smallest LSB multiple covering it,
/// `max(1, ceil(i / (2^bits · unit)))`; the quantile of those integers is the
/// quantile-sample's own multiple, so the LSB matches [`calibrate_adc`]
/// exactly. The reported quantile current is the upper edge of its
/// `unit / 16` bin.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcHistogram {
    unit: f64,
    codes: f64,
    multiples: Vec<u64>,
    fine: Vec<u64>,
    total: u64,
}

impl AdcHistogram {
    const FINE_PER_UNIT: f64 = 16.0;

    pub fn new(unit: f64, cfg: &QuantConfig) -> Result<Self> {
        cfg.validate()?;
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(CimError::input("unit current must be finite and > 0"));
        }
        Ok(AdcHistogram {
            unit,
            codes: f64::from(1u32 << cfg.adc_bits),
            multiples: Vec::new(),
            fine: Vec::new(),
            total: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, i: f64) {
        let m = ((i / (self.codes * self.unit)).ceil().max(1.0)) as usize;
        let f = ((i / self.unit * Self::FINE_PER_UNIT).ceil().max(1.0)) as usize - 1;
        bump(&mut self.multiples, m);
        bump(&mut self.fine, f);
        self.total += 1;
    }

    pub fn merge(&mut self, other: &AdcHistogram) {
        for (i, &c) in other.multiples.iter().enumerate() {
            bump_by(&mut self.multiples, i, c);
        }
        for (i, &c) in other.fine.iter().enumerate() {
            bump_by(&mut self.fine, i, c);
        }
        self.total += other.total;
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn calibrate(&self, cfg: &QuantConfig) -> AdcCalibration {
        if self.total == 0 {
            return AdcCalibration {
                lsb_units: 1,
                full_scale: self.codes * self.unit,
                quantile_current: 0.0,
            };
        }
        let rank = ((self.total as f64 * cfg.adc_calibration_quantile).ceil() as u64).clamp(1, self.total);
        let lsb_units = nth_bin(&self.multiples, rank).max(1) as u32;
        let q_bin = nth_bin(&self.fine, rank);
        AdcCalibration {
            lsb_units,
            full_scale: self.codes * self.unit * f64::from(lsb_units),
            quantile_current: (q_bin + 1) as f64 * self.unit / Self::FINE_PER_UNIT,
        }
    }
}

fn bump(v: &mut Vec<u64>, i: usize) {
    bump_by(v, i, 1);
}

fn bump_by(v: &mut Vec<u64>, i: usize, c: u64) {
    if v.len() <= i {
        v.resize(i + 1, 0);
    }
    v[i] += c;
}

/// Bin holding the `rank`-th smallest sample (1-based).
fn nth_bin(v: &[u64], rank: u64) -> usize {
    let mut seen = 0;
    for (i, &c) in v.iter().enumerate() {
        seen += c;
        if seen >= rank {
            return i;
        }
    }
    v.len().saturating_sub(1)
}
