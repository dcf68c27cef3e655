//! 3D tile: an `n_rows × n_cols` grid of column cells, each a stack of
//! `n_layers` TFT + RRAM branches.
//!
//! Row `r` drives the bit line of every cell in that row; the stacked TFTs of a
//! cell hang off a vertical pillar (one `r_wl` segment per layer) and each RRAM
//! returns to the select line of its column. Select lines run across the rows
//! to a virtual-ground sense node. Gates are driven per (column, layer).

mod banded;
pub mod branch;
pub mod network;
pub mod snapshot;

use serde::{Deserialize, Serialize};

use crate::device::rram::{program_to_level, rram_apply_pulse, LevelScheme, RramParams, RramState};
use crate::device::tft::{self, TftParams};
use crate::error::{CimError, Result};

pub use branch::{solve_branch, AccessDevice, BranchPoint, DriveConfig};
pub use network::{solve_network, BranchModel, LinearBranches, NetworkSolution, SolverOptions};

/// Largest write pulse magnitude accepted by [`Tile::write_cell`] (V).
pub const WRITE_VOLTAGE_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileGeometry {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_layers: usize,
    /// Pillar resistance per layer segment (Ω).
    pub r_wl: f64,
    /// Bit-line resistance per column segment (Ω).
    pub r_bl: f64,
    /// Select-line resistance per row segment (Ω).
    pub r_sl: f64,
}

impl Default for TileGeometry {
    fn default() -> Self {
        TileGeometry {
            n_rows: 8,
            n_cols: 8,
            n_layers: 8,
            r_wl: 2.5,
            r_bl: 2.5,
            r_sl: 2.5,
        }
    }
}

impl TileGeometry {
    /// Same counts, all wire resistances zero.
    pub fn without_parasitics(self) -> Self {
        TileGeometry {
            r_wl: 0.0,
            r_bl: 0.0,
            r_sl: 0.0,
            ..self
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols * self.n_layers
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n_rows", self.n_rows), ("n_cols", self.n_cols), ("n_layers", self.n_layers)] {
            if n == 0 {
                return Err(CimError::param(name, "must be >= 1"));
            }
        }
        for (name, r) in [("r_wl", self.r_wl), ("r_bl", self.r_bl), ("r_sl", self.r_sl)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(CimError::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Flat index, layer fastest.
    #[inline]
    pub fn index(&self, row: usize, col: usize, layer: usize) -> usize {
        (row * self.n_cols + col) * self.n_layers + layer
    }

    pub fn check_index(&self, row: usize, col: usize, layer: usize) -> Result<usize> {
        for (what, i, n) in [("row", row, self.n_rows), ("column", col, self.n_cols), ("layer", layer, self.n_layers)] {
            if i >= n {
                return Err(CimError::IndexOutOfRange { what, index: i, limit: n });
            }
        }
        Ok(self.index(row, col, layer))
    }
}

/// Input vector and gate selection for one read cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadStimulus {
    /// `layer_select[col][layer]`: gate of that nanosheet is driven on.
    pub layer_select: Vec<Vec<bool>>,
    pub v_read: f64,
    /// One bit per row; a set bit drives the row's bit line at `v_read`.
    pub input_bits: Vec<bool>,
}

impl ReadStimulus {
    pub const DEFAULT_V_READ: f64 = 0.5;

    /// Every layer of every column selected, every input bit set.
    pub fn all_on(geometry: &TileGeometry) -> Self {
        ReadStimulus {
            layer_select: vec![vec![true; geometry.n_layers]; geometry.n_cols],
            v_read: Self::DEFAULT_V_READ,
            input_bits: vec![true; geometry.n_rows],
        }
    }

    /// One layer selected in every column.
    pub fn single_layer(geometry: &TileGeometry, layer: usize, input_bits: Vec<bool>) -> Self {
        let mut sel = vec![false; geometry.n_layers];
        if layer < geometry.n_layers {
            sel[layer] = true;
        }
        ReadStimulus {
            layer_select: vec![sel; geometry.n_cols],
            v_read: Self::DEFAULT_V_READ,
            input_bits,
        }
    }

    pub fn validate(&self, geometry: &TileGeometry, drive: &DriveConfig) -> Result<()> {
        if !(self.v_read > 0.0 && self.v_read.is_finite()) {
            return Err(CimError::input(format!("v_read must be > 0, got {}", self.v_read)));
        }
        if self.input_bits.len() != geometry.n_rows {
            return Err(CimError::input(format!(
                "{} input bits for {} rows",
                self.input_bits.len(),
                geometry.n_rows
            )));
        }
        if self.layer_select.len() != geometry.n_cols {
            return Err(CimError::input(format!(
                "layer selection for {} columns, tile has {}",
                self.layer_select.len(),
                geometry.n_cols
            )));
        }
        for (c, sel) in self.layer_select.iter().enumerate() {
            if sel.len() != geometry.n_layers {
                return Err(CimError::input(format!(
                    "column {c}: {} layer flags for {} layers",
                    sel.len(),
                    geometry.n_layers
                )));
            }
            let active = sel.iter().filter(|&&s| s).count();
            if active > drive.max_active_layers {
                return Err(CimError::input(format!(
                    "column {c}: {active} layers selected, limit is {}",
                    drive.max_active_layers
                )));
            }
        }
        Ok(())
    }
}

/// Result of a parasitic-aware MAC.
#[derive(Debug, Clone, PartialEq)]
pub struct MacResult {
    pub column_currents: Vec<f64>,
    pub solution: NetworkSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub geometry: TileGeometry,
    cells: Vec<RramState>,
    pub tft: TftParams,
    pub rram: RramParams,
    pub drive: DriveConfig,
    pub access: AccessDevice,
}

impl Tile {
    /// Tile with every cell at level 0.
    pub fn new(geometry: TileGeometry, tft: TftParams, rram: RramParams) -> Result<Self> {
        geometry.validate()?;
        tft.validate()?;
        rram.validate()?;
        Ok(Tile {
            geometry,
            cells: vec![RramState::hrs(&rram); geometry.n_cells()],
            tft,
            rram,
            drive: DriveConfig::default(),
            access: AccessDevice::Tft,
        })
    }

    pub fn from_cells(
        geometry: TileGeometry,
        tft: TftParams,
        rram: RramParams,
        cells: Vec<RramState>,
    ) -> Result<Self> {
        let mut tile = Tile::new(geometry, tft, rram)?;
        if cells.len() != geometry.n_cells() {
            return Err(CimError::input(format!(
                "{} cell states for a tile of {} cells",
                cells.len(),
                geometry.n_cells()
            )));
        }
        for s in &cells {
            s.validate(&rram)?;
        }
        tile.cells = cells;
        Ok(tile)
    }

    pub fn with_drive(mut self, drive: DriveConfig) -> Self {
        self.drive = drive;
        self
    }

    pub fn with_access(mut self, access: AccessDevice) -> Self {
        self.access = access;
        self
    }

    /// Cells in flat order (row, column, layer; layer fastest).
    pub fn cells(&self) -> &[RramState] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize, layer: usize) -> Result<&RramState> {
        let i = self.geometry.check_index(row, col, layer)?;
        Ok(&self.cells[i])
    }

    /// Replace one cell's state.
    pub fn set_cell(&mut self, row: usize, col: usize, layer: usize, state: RramState) -> Result<()> {
        let i = self.geometry.check_index(row, col, layer)?;
        state.validate(&self.rram)?;
        self.cells[i] = state;
        Ok(())
    }

    /// Place every cell at `level(row, col, layer)` from the level table.
    pub fn program_levels(
        &mut self,
        scheme: LevelScheme,
        mut level: impl FnMut(usize, usize, usize) -> usize,
    ) -> Result<()> {
        let g = self.geometry;
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                for l in 0..g.n_layers {
                    let d2d = self.cells[g.index(r, c, l)].d2d_factor;
                    let mut s = program_to_level(&self.rram, level(r, c, l), scheme)?;
                    s.d2d_factor = d2d;
                    self.cells[g.index(r, c, l)] = s;
                }
            }
        }
        Ok(())
    }

    /// Overwrite the d2d factors, flat order.
    pub fn set_d2d_factors(&mut self, factors: &[f64]) -> Result<()> {
        if factors.len() != self.cells.len() {
            return Err(CimError::input(format!(
                "{} factors for {} cells",
                factors.len(),
                self.cells.len()
            )));
        }
        if let Some(f) = factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(CimError::input(format!("d2d factor {f} must be finite and > 0")));
        }
        for (s, &f) in self.cells.iter_mut().zip(factors) {
            s.d2d_factor = f;
        }
        Ok(())
    }

    /// Apply a pulse sequence to one cell through an ideal switch matrix.
    pub fn write_cell(&self, row: usize, col: usize, layer: usize, pulses: &[(f64, f64)]) -> Result<Tile> {
        let i = self.geometry.check_index(row, col, layer)?;
        if let Some(&(v, _)) = pulses.iter().find(|(v, _)| !(v.abs() <= WRITE_VOLTAGE_LIMIT)) {
            return Err(CimError::input(format!(
                "write pulse of {v} V exceeds the {WRITE_VOLTAGE_LIMIT} V limit"
            )));
        }
        let mut out = self.clone();
        let mut s = out.cells[i];
        for &(v, dt) in pulses {
            s = rram_apply_pulse(&self.rram, &s, v, dt)?;
        }
        out.cells[i] = s;
        Ok(out)
    }

    /// Branch currents with both terminals ideal: `[cell] -> (on, off)` at `v_read`.
    pub fn branch_currents(&self, v_read: f64) -> Result<Vec<(f64, f64)>> {
        if !(v_read >= 0.0 && v_read.is_finite()) {
            return Err(CimError::input(format!("v_read must be finite and >= 0, got {v_read}")));
        }
        let model = tft::model(&self.tft);
        let on = self.drive.gate_voltage(true);
        let off = self.drive.gate_voltage(false);
        self.cells
            .iter()
            .map(|s| {
                let i_on = branch::operating_point(
                    self.access, &model, self.tft.v_threshold, &self.rram, s, on, v_read, 0.0,
                )?
                .current;
                let i_off = branch::operating_point(
                    self.access, &model, self.tft.v_threshold, &self.rram, s, off, v_read, 0.0,
                )?
                .current;
                Ok((i_on, i_off))
            })
            .collect()
    }

    /// Column currents with zero wire resistance, summed per row over the
    /// stacked layers and then over rows in ascending order.
    pub fn ideal_mac(&self, stim: &ReadStimulus) -> Result<Vec<f64>> {
        stim.validate(&self.geometry, &self.drive)?;
        let g = self.geometry;
        let model = tft::model(&self.tft);
        let mut out = vec![0.0; g.n_cols];
        for (c, total) in out.iter_mut().enumerate() {
            for r in 0..g.n_rows {
                if !stim.input_bits[r] {
                    continue;
                }
                let mut row = 0.0;
                for l in 0..g.n_layers {
                    let vg = self.drive.gate_voltage(stim.layer_select[c][l]);
                    let s = &self.cells[g.index(r, c, l)];
                    row += branch::operating_point(
                        self.access,
                        &model,
                        self.tft.v_threshold,
                        &self.rram,
                        s,
                        vg,
                        stim.v_read,
                        0.0,
                    )?
                    .current;
                }
                *total += row;
            }
        }
        Ok(out)
    }

    /// Column currents and node voltages of the full resistive network.
    pub fn mac_with_ir_drop(&self, stim: &ReadStimulus) -> Result<MacResult> {
        self.mac_with_options(stim, &SolverOptions::default())
    }

    pub fn mac_with_options(&self, stim: &ReadStimulus, opts: &SolverOptions) -> Result<MacResult> {
        stim.validate(&self.geometry, &self.drive)?;
        let branches = network::DeviceBranches::new(self, stim);
        let solution = solve_network(&self.geometry, stim, &branches, opts)?;
        Ok(MacResult {
            column_currents: solution.column_currents.clone(),
            solution,
        })
    }

    /// Σ column current · v_read under parasitics (W).
    pub fn static_power(&self, stim: &ReadStimulus) -> Result<f64> {
        let mac = self.mac_with_ir_drop(stim)?;
        Ok(mac.column_currents.iter().sum::<f64>() * stim.v_read)
    }
}

pub fn ideal_mac(tile: &Tile, stim: &ReadStimulus) -> Result<Vec<f64>> {
    tile.ideal_mac(stim)
}

pub fn mac_with_ir_drop(tile: &Tile, stim: &ReadStimulus) -> Result<MacResult> {
    tile.mac_with_ir_drop(stim)
}

pub fn write_cell(tile: &Tile, row: usize, col: usize, layer: usize, pulses: &[(f64, f64)]) -> Result<Tile> {
    tile.write_cell(row, col, layer, pulses)
}

pub fn tile_static_power(tile: &Tile, stim: &ReadStimulus) -> Result<f64> {
    tile.static_power(stim)
}
