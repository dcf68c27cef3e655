//! One tile read: ideal and IR-drop column currents, ADC codes, static power.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cim_core::periphery::convert;
use cim_core::tile::{ReadStimulus, Tile};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{Manifest, RunDir};
use crate::CliError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellLevel {
    pub row: usize,
    pub col: usize,
    pub layer: usize,
    pub level: usize,
}

/// Stimulus file contents.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusFile {
    /// Bit-line drive (V); the configured read voltage when absent.
    pub v_read: Option<f64>,
    /// One 0/1 entry per row.
    pub input_bits: Vec<u8>,
    /// Layers selected in every column; all layers when absent.
    pub layers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRow {
    pub column: usize,
    pub ideal_current: f64,
    pub ir_drop_current: f64,
    pub ideal_code: u32,
    pub ir_drop_code: u32,
    pub saturated: bool,
}

pub fn read_weights(path: &Path) -> Result<Vec<CellLevel>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|c| c.with_context(|| format!("malformed weight file {}", path.display())))
        .collect()
}

pub fn read_stimulus(path: &Path, cfg: &ExperimentConfig) -> Result<ReadStimulus> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: StimulusFile = toml::from_str(&text)
        .map_err(|e| CliError::input(format!("malformed stimulus {}: {e}", path.display())))?;
    stimulus(&f, cfg)
}

pub fn stimulus(f: &StimulusFile, cfg: &ExperimentConfig) -> Result<ReadStimulus> {
    let g = cfg.tile;
    if let Some(&b) = f.input_bits.iter().find(|&&b| b > 1) {
        bail!(CliError::input(format!("input bit {b} is not 0 or 1")));
    }
    let mut sel = vec![f.layers.is_none(); g.n_layers];
    for &l in f.layers.iter().flatten() {
        if l >= g.n_layers {
            bail!(CliError::input(format!("layer {l} outside 0..{}", g.n_layers)));
        }
        sel[l] = true;
    }
    let s = ReadStimulus {
        layer_select: vec![sel; g.n_cols],
        v_read: f.v_read.unwrap_or(cfg.drive.v_read),
        input_bits: f.input_bits.iter().map(|&b| b == 1).collect(),
    };
    s.validate(&g, &cfg.drive)?;
    Ok(s)
}

pub fn program(cfg: &ExperimentConfig, cells: &[CellLevel]) -> Result<Tile> {
    let mut tile = cfg.tile()?;
    let g = tile.geometry;
    let mut levels = vec![0usize; g.n_cells()];
    for c in cells {
        levels[g.check_index(c.row, c.col, c.layer)?] = c.level;
    }
    tile.program_levels(cfg.device.level_scheme, |r, c, l| levels[g.index(r, c, l)])?;
    Ok(tile)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let cells = match &cfg.mac.weights {
        Some(p) => read_weights(p)?,
        None => Vec::new(),
    };
    let tile = program(cfg, &cells)?;
    let stim = match &cfg.mac.stimulus {
        Some(p) => read_stimulus(p, cfg)?,
        None => ReadStimulus {
            v_read: cfg.drive.v_read,
            ..ReadStimulus::all_on(&cfg.tile)
        },
    };
    let ideal = tile.ideal_mac(&stim)?;
    let ir = tile.mac_with_ir_drop(&stim)?;
    let rows: Vec<ColumnRow> = ideal
        .iter()
        .zip(&ir.column_currents)
        .enumerate()
        .map(|(column, (&a, &b))| {
            let (ca, sa) = convert(a, &cfg.quant);
            let (cb, sb) = convert(b, &cfg.quant);
            ColumnRow {
                column,
                ideal_current: a,
                ir_drop_current: b,
                ideal_code: ca,
                ir_drop_code: cb,
                saturated: sa || sb,
            }
        })
        .collect();
    let static_power = ir.column_currents.iter().sum::<f64>() * stim.v_read;
    let worst_rel = rows
        .iter()
        .map(|r| (r.ir_drop_current - r.ideal_current).abs() / r.ideal_current.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    let mut out = RunDir::create(cfg, "mac")?;
    out.write_csv("mac.csv", &rows)?;
    out.write_json(
        "mac.json",
        &serde_json::json!({
            "v_read": stim.v_read,
            "programmed_cells": cells.len(),
            "static_power": static_power,
            "ideal_static_power": ideal.iter().sum::<f64>() * stim.v_read,
            "max_column_current": ir.column_currents.iter().copied().fold(0.0, f64::max),
            "worst_relative_ir_drop": worst_rel,
            "adc_full_scale": cfg.quant.adc_full_scale,
        }),
    )?;
    out.finish()
}
