//! Device-to-device variation and the distinguishable-states analysis.
//!
//! Randomness is drawn from ChaCha streams keyed by the experiment seed, a
//! named purpose and a sub-index, so every consumer gets an independent,
//! reproducible sequence regardless of thread count or call order.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::rram::{level_gaps, rram_current, LevelScheme, Provenance, RramParams, RramState};
use crate::error::{CimError, Result};
use crate::tile::Tile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum D2dDistribution {
    /// exp(σ z): median 1, log-space standard deviation σ.
    #[default]
    Lognormal,
    /// 1 + σ z, floored at [`GAUSSIAN_FLOOR`].
    GaussianClamped,
}

/// Smallest factor the clamped gaussian can return.
pub const GAUSSIAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationSpec {
    pub sigma_d2d: f64,
    pub distribution: D2dDistribution,
    pub seed: u64,
}

impl Default for VariationSpec {
    fn default() -> Self {
        VariationSpec {
            sigma_d2d: 0.10,
            distribution: D2dDistribution::Lognormal,
            seed: 0,
        }
    }
}

impl VariationSpec {
    pub fn none() -> Self {
        VariationSpec {
            sigma_d2d: 0.0,
            ..VariationSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d2d >= 0.0 && self.sigma_d2d.is_finite()) {
            return Err(CimError::param("sigma_d2d", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Purposes that get their own random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Device = 1,
    Dropout = 2,
    Init = 3,
    Shuffle = 4,
    Calibration = 5,
}

/// Generator for `(seed, stream, sub)`.
pub fn stream_rng(seed: u64, stream: Stream, sub: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | (sub & ((1 << 48) - 1)));
    rng
}

fn draw(spec: &VariationSpec, rng: &mut ChaCha12Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    match spec.distribution {
        D2dDistribution::Lognormal => (spec.sigma_d2d * z).exp(),
        D2dDistribution::GaussianClamped => (1.0 + spec.sigma_d2d * z).max(GAUSSIAN_FLOOR),
    }
}

/// `n` factors from the device stream, sub-index `sub`.
pub fn sample_d2d_stream(spec: &VariationSpec, n: usize, sub: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.sigma_d2d == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let mut rng = stream_rng(spec.seed, Stream::Device, sub);
    Ok((0..n).map(|_| draw(spec, &mut rng)).collect())
}

pub fn sample_d2d(spec: &VariationSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(CimError::input("sample count must be >= 1"));
    }
    sample_d2d_stream(spec, n, 0)
}

/// Fresh factors for every cell; nominal levels and gaps are untouched.
pub fn perturb_tile(tile: &Tile, spec: &VariationSpec) -> Result<Tile> {
    perturb_tile_indexed(tile, spec, 0)
}

/// As [`perturb_tile`], drawing from sub-stream `tile_index` so distinct
/// tiles of one experiment get independent factors.
pub fn perturb_tile_indexed(tile: &Tile, spec: &VariationSpec, tile_index: u64) -> Result<Tile> {
    let factors = sample_d2d_stream(spec, tile.cells().len(), tile_index)?;
    let mut out = tile.clone();
    out.set_d2d_factors(&factors)?;
    Ok(out)
}

/// Adjacent levels k, k+1 are separable when μ_{k+1} − μ_k > k_sigma (σ_k + σ_{k+1}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationCriterion {
    pub k_sigma: f64,
}

impl Default for SeparationCriterion {
    fn default() -> Self {
        SeparationCriterion { k_sigma: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub mean_current: f64,
    pub std_current: f64,
    pub group_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesReport {
    pub levels: Vec<LevelStats>,
    pub n_groups: usize,
}

impl StatesReport {
    /// `level,mean_current,std_current,group_id`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,mean_current,std_current,group_id\n");
        for l in &self.levels {
            let _ = writeln!(out, "{},{},{},{}", l.level, l.mean_current, l.std_current, l.group_id);
        }
        out
    }
}

pub const MIN_MONTE_CARLO: usize = 1000;

/// Monte-Carlo read currents of every nominal level, merged into groups of
/// mutually indistinguishable levels.
pub fn distinguishable_states_report(
    p: &RramParams,
    scheme: LevelScheme,
    spec: &VariationSpec,
    v_read: f64,
    n_mc: usize,
    criterion: &SeparationCriterion,
) -> Result<StatesReport> {
    p.validate()?;
    spec.validate()?;
    if n_mc < MIN_MONTE_CARLO {
        return Err(CimError::input(format!(
            "need at least {MIN_MONTE_CARLO} Monte-Carlo devices, got {n_mc}"
        )));
    }
    if !(v_read > 0.0 && v_read.is_finite()) {
        return Err(CimError::input("v_read must be finite and > 0"));
    }
    let gaps = level_gaps(p, scheme);
    let stats: Vec<(f64, f64)> = gaps
        .par_iter()
        .enumerate()
        .map(|(k, &gap)| {
            let currents: Vec<f64> = sample_d2d_stream(spec, n_mc, k as u64)?
                .into_iter()
                .map(|f| {
                    let s = RramState {
                        gap,
                        level: k as u16,
                        d2d_factor: f,
                        provenance: Provenance::Table(scheme),
                    };
                    rram_current(p, &s, v_read)
                })
                .collect();
            let n = n_mc as f64;
            let mean = currents.iter().sum::<f64>() / n;
            let var = currents.iter().map(|i| (i - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok((mean, var.sqrt()))
        })
        .collect::<Result<_>>()?;

    let mut group = 0;
    let mut levels = Vec::with_capacity(stats.len());
    for (k, &(mean, std)) in stats.iter().enumerate() {
        if k > 0 {
            let (pm, ps) = stats[k - 1];
            if mean - pm > criterion.k_sigma * (ps + std) {
                group += 1;
            }
        }
        levels.push(LevelStats {
            level: k,
            mean_current: mean,
            std_current: std,
            group_id: group,
        });
    }
    Ok(StatesReport {
        levels,
        n_groups: group + 1,
    })
}

/// Number of distinguishable groups among the nominal levels.
pub fn distinguishable_states(
    p: &RramParams,
    spec: &VariationSpec,
    v_read: f64,
    n_mc: usize,
    criterion: &SeparationCriterion,
) -> Result<usize> {
    Ok(distinguishable_states_report(p, LevelScheme::default(), spec, v_read, n_mc, criterion)?.n_groups)
}
