//! Bit-serial analog dot products on one tile slot.
//!
//! A slot holds a `depth × width` block of signed weights (`depth ≤ n_layers ·
//! n_rows`, `width ≤ n_cols`). Entry `k` of the dot product sits on layer
//! `k / n_rows`, row `k % n_rows`. Each (slice, polarity) pair gets its own
//! physical tile ("plane"). A read selects one layer, drives one group of rows
//! with one activation bit, and digitizes every column of every plane.
//!
//! [`SlotLut`] memoizes the digital result of every (layer, row mask) read so
//! inference does not repeat the analog evaluation; it is exact with respect
//! to [`dot_direct`].

use serde::{Deserialize, Serialize};

use crate::device::rram::LevelScheme;
use crate::error::{CimError, Result};
use crate::periphery::{convert, shift_add_accumulate, AdcCalibration, DiffCode, QuantConfig};
use crate::tile::{ReadStimulus, Tile};

/// How plane currents are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReadMode {
    /// Zero wire resistance.
    #[default]
    Ideal,
    /// Full nodal solve with the tile's wire resistances.
    WithIrDrop,
}

/// Programmed planes of one weight block.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Index `2·slice + polarity`, polarity 0 holds positive weights.
    pub planes: Vec<Tile>,
    pub depth: usize,
    pub width: usize,
}

impl Slot {
    pub fn capacity(template: &Tile) -> (usize, usize) {
        let g = template.geometry;
        (g.n_layers * g.n_rows, g.n_cols)
    }

    /// (layer, row) of dot-product entry `k`.
    #[inline]
    pub fn position(&self, k: usize) -> (usize, usize) {
        let n_rows = self.planes[0].geometry.n_rows;
        (k / n_rows, k % n_rows)
    }
}

/// Program a `depth × width` row-major weight block onto fresh planes.
pub fn program_slot(
    template: &Tile,
    weights: &[i32],
    depth: usize,
    width: usize,
    cfg: &QuantConfig,
    scheme: LevelScheme,
) -> Result<Slot> {
    cfg.validate()?;
    let (max_depth, max_width) = Slot::capacity(template);
    if depth == 0 || width == 0 || depth > max_depth || width > max_width {
        return Err(CimError::input(format!(
            "block {depth}×{width} does not fit a {max_depth}×{max_width} slot"
        )));
    }
    if weights.len() != depth * width {
        return Err(CimError::input(format!(
            "{} weights for a {depth}×{width} block",
            weights.len()
        )));
    }
    let n_slices = cfg.n_slices();
    let n_levels = template.rram.n_levels;
    let mut levels = vec![vec![0usize; template.geometry.n_cells()]; 2 * n_slices];
    let g = template.geometry;
    for k in 0..depth {
        let (layer, row) = (k / g.n_rows, k % g.n_rows);
        for c in 0..width {
            let (negative, slices) = cfg.split_weight(weights[k * width + c])?;
            let pol = usize::from(negative);
            for (s, &v) in slices.iter().enumerate() {
                levels[2 * s + pol][g.index(row, c, layer)] = cfg.slice_level(v, n_levels)?;
            }
        }
    }
    let planes = levels
        .into_iter()
        .map(|lv| {
            let mut t = template.clone();
            t.program_levels(scheme, |r, c, l| lv[g.index(r, c, l)])?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Slot { planes, depth, width })
}

/// Recover the weight block from the programmed nominal levels.
pub fn read_back(slot: &Slot, cfg: &QuantConfig) -> Result<Vec<i32>> {
    let n_slices = cfg.n_slices();
    if slot.planes.len() != 2 * n_slices {
        return Err(CimError::input(format!(
            "{} planes for {} slices",
            slot.planes.len(),
            n_slices
        )));
    }
    let step = cfg.level_step(slot.planes[0].rram.n_levels);
    let mut out = Vec::with_capacity(slot.depth * slot.width);
    for k in 0..slot.depth {
        let (layer, row) = slot.position(k);
        for c in 0..slot.width {
            let mut parts = [vec![0u32; n_slices], vec![0u32; n_slices]];
            for (p, tile) in slot.planes.iter().enumerate() {
                let level = usize::from(tile.cell(row, c, layer)?.level);
                if level % step != 0 || level / step >= cfg.levels_per_device as usize {
                    return Err(CimError::Internal(format!(
                        "level {level} at ({row}, {c}, {layer}) is not a slice level"
                    )));
                }
                parts[p % 2][p / 2] = (level / step) as u32;
            }
            let pos = cfg.join_weight(false, &parts[0]);
            let neg = cfg.join_weight(false, &parts[1]);
            if pos != 0 && neg != 0 {
                return Err(CimError::Internal(format!(
                    "both polarities programmed for entry ({k}, {c})"
                )));
            }
            out.push(pos - neg);
        }
    }
    Ok(out)
}

/// Current of one slice step: branch at the level of slice value 1 minus the
/// branch at level 0, gate on, nominal device.
pub fn unit_current(template: &Tile, cfg: &QuantConfig, scheme: LevelScheme) -> Result<f64> {
    let g = crate::tile::TileGeometry {
        n_rows: 1,
        n_cols: 1,
        n_layers: 1,
        ..template.geometry.without_parasitics()
    };
    let mut t = Tile::new(g, template.tft, template.rram)?
        .with_drive(template.drive)
        .with_access(template.access);
    let stim = ReadStimulus {
        v_read: template.drive.v_read,
        ..ReadStimulus::all_on(&g)
    };
    let zero = t.ideal_mac(&stim)?[0];
    let level = cfg.slice_level(1, template.rram.n_levels)?;
    t.program_levels(scheme, |_, _, _| level)?;
    let one = t.ideal_mac(&stim)?[0];
    Ok(one - zero)
}

/// Row-group masks for `rows_per_read` rows at a time.
pub fn row_groups(n_rows: usize, rows_per_read: usize) -> Vec<u32> {
    (0..n_rows)
        .step_by(rows_per_read)
        .map(|start| {
            let end = (start + rows_per_read).min(n_rows);
            (start..end).fold(0u32, |m, r| m | (1 << r))
        })
        .collect()
}

/// Largest row count the mask tables support.
pub const MAX_LUT_ROWS: usize = 12;

/// Rows `[start, start + len)` read together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Group {
    start: usize,
    len: usize,
    /// First entry of this group in a per-(plane, layer) block.
    offset: usize,
}

impl Group {
    #[inline]
    fn local(&self, mask: u32) -> usize {
        ((mask >> self.start) & ((1 << self.len) - 1)) as usize
    }
}

fn group_layout(n_rows: usize, rows_per_read: usize) -> (Vec<Group>, usize) {
    let mut offset = 0;
    let groups = (0..n_rows)
        .step_by(rows_per_read)
        .map(|start| {
            let len = rows_per_read.min(n_rows - start);
            let g = Group { start, len, offset };
            offset += 1 << len;
            g
        })
        .collect();
    (groups, offset)
}

/// Column currents of every single-group read, per plane and layer.
#[derive(Debug, Clone)]
pub struct SlotCurrents {
    depth: usize,
    width: usize,
    n_rows: usize,
    n_planes: usize,
    n_layers: usize,
    n_cols: usize,
    groups: Vec<Group>,
    /// Entries per (plane, layer) block.
    block: usize,
    /// `((plane · n_layers + layer) · block + group.offset + local) · n_cols + col`
    values: Vec<f64>,
}

impl SlotCurrents {
    pub fn build(slot: &Slot, cfg: &QuantConfig, mode: ReadMode) -> Result<Self> {
        let g = slot.planes[0].geometry;
        if g.n_rows > MAX_LUT_ROWS {
            return Err(CimError::input(format!(
                "mask tables support at most {MAX_LUT_ROWS} rows"
            )));
        }
        let (groups, block) = group_layout(g.n_rows, cfg.effective_rows_per_read(g.n_rows));
        let n_planes = slot.planes.len();
        let mut values = vec![0.0; n_planes * g.n_layers * block * g.n_cols];
        let mut row_sum = vec![0.0; g.n_rows * g.n_cols];
        for (p, tile) in slot.planes.iter().enumerate() {
            let v_read = tile.drive.v_read;
            let branches = match mode {
                ReadMode::Ideal => Some(tile.branch_currents(v_read)?),
                ReadMode::WithIrDrop => None,
            };
            for l in 0..g.n_layers {
                if let Some(branches) = &branches {
                    for r in 0..g.n_rows {
                        for c in 0..g.n_cols {
                            let mut s = 0.0;
                            for l2 in 0..g.n_layers {
                                let (on, off) = branches[g.index(r, c, l2)];
                                s += if l2 == l { on } else { off };
                            }
                            row_sum[r * g.n_cols + c] = s;
                        }
                    }
                }
                let base = (p * g.n_layers + l) * block;
                for grp in &groups {
                    for local in 1..1usize << grp.len {
                        let at = (base + grp.offset + local) * g.n_cols;
                        match mode {
                            ReadMode::Ideal => {
                                // Rows join in ascending order, as in Tile::ideal_mac.
                                let top = usize::BITS - 1 - local.leading_zeros();
                                let rest = (base + grp.offset + (local & !(1 << top))) * g.n_cols;
                                let row = (grp.start + top as usize) * g.n_cols;
                                for c in 0..g.n_cols {
                                    values[at + c] = values[rest + c] + row_sum[row + c];
                                }
                            }
                            ReadMode::WithIrDrop => {
                                let mask = (local as u32) << grp.start;
                                let bits = (0..g.n_rows).map(|r| mask >> r & 1 == 1).collect();
                                let stim = ReadStimulus {
                                    v_read,
                                    ..ReadStimulus::single_layer(&g, l, bits)
                                };
                                let cur = tile.mac_with_ir_drop(&stim)?.column_currents;
                                values[at..at + g.n_cols].copy_from_slice(&cur);
                            }
                        }
                    }
                }
            }
        }
        Ok(SlotCurrents {
            depth: slot.depth,
            width: slot.width,
            n_rows: g.n_rows,
            n_planes,
            n_layers: g.n_layers,
            n_cols: g.n_cols,
            groups,
            block,
            values,
        })
    }

    #[inline]
    fn at(&self, plane: usize, layer: usize, group: &Group, local: usize) -> &[f64] {
        let i = ((plane * self.n_layers + layer) * self.block + group.offset + local) * self.n_cols;
        &self.values[i..i + self.n_cols]
    }

    /// Call `f` with the current of every column sample that `acts` would
    /// digitize; reads with no row driven are skipped.
    pub fn for_each_read(&self, acts: &[u32], act_bits: u32, mut f: impl FnMut(f64)) -> Result<()> {
        check_acts(self.depth, acts)?;
        for b in 0..act_bits {
            for l in 0..self.n_layers {
                let m = layer_mask(self.n_rows, self.depth, acts, l, b);
                for grp in &self.groups {
                    let local = grp.local(m);
                    if local == 0 {
                        continue;
                    }
                    for p in 0..self.n_planes {
                        self.at(p, l, grp, local)[..self.width].iter().for_each(|&i| f(i));
                    }
                }
            }
        }
        Ok(())
    }

    /// [`Self::for_each_read`] collecting into `out`.
    pub fn push_read_samples(&self, acts: &[u32], act_bits: u32, out: &mut Vec<f64>) -> Result<()> {
        self.for_each_read(acts, act_bits, |i| out.push(i))
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Heap bytes held by the current table.
    pub fn heap_bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<f64>()
    }
}

fn check_acts(depth: usize, acts: &[u32]) -> Result<()> {
    if acts.len() != depth {
        return Err(CimError::input(format!(
            "{} activations for a slot of depth {depth}",
            acts.len()
        )));
    }
    Ok(())
}

/// Row mask of activation bit `b` on layer `l`.
#[inline]
fn layer_mask(n_rows: usize, depth: usize, acts: &[u32], l: usize, b: u32) -> u32 {
    let start = l * n_rows;
    let end = (start + n_rows).min(depth);
    let mut m = 0;
    if start < end {
        for (r, &a) in acts[start..end].iter().enumerate() {
            m |= ((a >> b) & 1) << r;
        }
    }
    m
}

/// Digital result of every (layer, row mask) read, combined over planes and
/// row groups, in units of the integer dot product.
#[derive(Debug, Clone)]
pub struct SlotLut {
    depth: usize,
    n_layers: usize,
    n_rows: usize,
    n_masks: usize,
    width: usize,
    /// `(layer · n_masks + mask) · width + col`
    table: Vec<i32>,
    /// Saturated ADC samples per (layer, mask).
    saturations: Vec<u32>,
}

impl SlotLut {
    pub fn build(currents: &SlotCurrents, cfg: &QuantConfig, cal: &AdcCalibration) -> Result<Self> {
        let adc = QuantConfig {
            adc_full_scale: cal.full_scale,
            ..*cfg
        };
        adc.validate()?;
        let weights = cfg.slice_weights();
        let (n_layers, n_rows, width) = (currents.n_layers, currents.n_rows, currents.width);
        let n_masks = 1usize << n_rows;
        let lsb = i32::try_from(cal.lsb_units).map_err(|_| CimError::input("ADC LSB multiple too large"))?;
        let mut table = vec![0i32; n_layers * n_masks * width];
        let mut saturations = vec![0u32; n_layers * n_masks];
        // Digital value of each single-group read.
        let mut part = vec![0i32; currents.block * width];
        let mut part_sat = vec![0u32; currents.block];
        for l in 0..n_layers {
            part.fill(0);
            part_sat.fill(0);
            for grp in &currents.groups {
                for local in 1..1usize << grp.len {
                    let k = grp.offset + local;
                    for p in 0..currents.n_planes {
                        let w = weights[p / 2] as i32 * if p % 2 == 0 { 1 } else { -1 };
                        let cur = currents.at(p, l, grp, local);
                        for c in 0..width {
                            let (code, sat) = convert(cur[c], &adc);
                            part[k * width + c] += w * code as i32;
                            part_sat[k] += u32::from(sat);
                        }
                    }
                }
            }
            for m in 0..n_masks {
                let row = (l * n_masks + m) * width;
                for grp in &currents.groups {
                    let local = grp.local(m as u32);
                    if local == 0 {
                        continue;
                    }
                    let k = grp.offset + local;
                    for c in 0..width {
                        table[row + c] += lsb * part[k * width + c];
                    }
                    saturations[l * n_masks + m] += part_sat[k];
                }
            }
        }
        Ok(SlotLut {
            depth: currents.depth,
            n_layers,
            n_rows,
            n_masks,
            width,
            table,
            saturations,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Heap bytes held by the table.
    pub fn heap_bytes(&self) -> usize {
        self.table.len() * std::mem::size_of::<i32>() + self.saturations.len() * std::mem::size_of::<u32>()
    }

    #[inline]
    pub fn entry(&self, layer: usize, mask: usize) -> &[i32] {
        let i = (layer * self.n_masks + mask) * self.width;
        &self.table[i..i + self.width]
    }

    #[inline]
    pub fn saturations(&self, layer: usize, mask: usize) -> u32 {
        self.saturations[layer * self.n_masks + mask]
    }

    /// Add the dot products of `acts` into `out`; returns saturated samples.
    pub fn accumulate(&self, acts: &[u32], act_bits: u32, out: &mut [i64]) -> Result<u64> {
        check_acts(self.depth, acts)?;
        let mut sat = 0u64;
        for b in 0..act_bits {
            for l in 0..self.n_layers {
                let m = layer_mask(self.n_rows, self.depth, acts, l, b) as usize;
                if m == 0 {
                    continue;
                }
                for (o, &v) in out.iter_mut().zip(self.entry(l, m)) {
                    *o += i64::from(v) << b;
                }
                sat += u64::from(self.saturations(l, m));
            }
        }
        Ok(sat)
    }

    /// Byte-activation fast path for 8-row tiles: `acts` holds `n_layers · 8`
    /// entries (zero padded), `out` receives `width` sums.
    #[inline]
    pub fn accumulate_u8(&self, acts: &[u8], out: &mut [i32]) -> u64 {
        debug_assert_eq!(self.n_rows, 8);
        debug_assert_eq!(acts.len(), self.n_layers * 8);
        let mut sat = 0u64;
        for (l, chunk) in acts.chunks_exact(8).enumerate() {
            let x = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if x == 0 {
                continue;
            }
            let planes = bit_planes(x);
            for b in 0..8 {
                let m = ((planes >> (8 * b)) & 0xFF) as usize;
                if m == 0 {
                    continue;
                }
                let e = self.entry(l, m);
                for (o, &v) in out.iter_mut().zip(e) {
                    *o += v << b;
                }
                sat += u64::from(self.saturations[l * self.n_masks + m]);
            }
        }
        sat
    }
}

/// Transpose an 8×8 bit matrix: byte `r` bit `b` of the input becomes byte
/// `b` bit `r` of the output.
#[inline]
pub fn bit_planes(mut x: u64) -> u64 {
    let t = (x ^ (x >> 7)) & 0x00AA_00AA_00AA_00AA;
    x ^= t ^ (t << 7);
    let t = (x ^ (x >> 14)) & 0x0000_CCCC_0000_CCCC;
    x ^= t ^ (t << 14);
    let t = (x ^ (x >> 28)) & 0x0000_0000_F0F0_F0F0;
    x ^= t ^ (t << 28);
    x
}

/// Reference pipeline: explicit reads through the tile model, ADC and
/// shift-add. Returns the per-column dot products and saturated samples.
pub fn dot_direct(
    slot: &Slot,
    acts: &[u32],
    cfg: &QuantConfig,
    cal: &AdcCalibration,
    mode: ReadMode,
) -> Result<(Vec<i64>, u64)> {
    check_acts(slot.depth, acts)?;
    let adc = QuantConfig {
        adc_full_scale: cal.full_scale,
        ..*cfg
    };
    adc.validate()?;
    let g = slot.planes[0].geometry;
    let n_slices = cfg.n_slices();
    let groups = row_groups(g.n_rows, cfg.effective_rows_per_read(g.n_rows));
    let mut codes = vec![vec![vec![DiffCode::default(); n_slices]; cfg.act_bits as usize]; slot.width];
    let mut sat = 0u64;
    for b in 0..cfg.act_bits {
        for l in 0..g.n_layers {
            let m = layer_mask(g.n_rows, slot.depth, acts, l, b);
            for &grp in &groups {
                let mg = m & grp;
                if mg == 0 {
                    continue;
                }
                let bits: Vec<bool> = (0..g.n_rows).map(|r| mg >> r & 1 == 1).collect();
                for (p, tile) in slot.planes.iter().enumerate() {
                    let stim = ReadStimulus {
                        v_read: tile.drive.v_read,
                        ..ReadStimulus::single_layer(&g, l, bits.clone())
                    };
                    let cur = match mode {
                        ReadMode::Ideal => tile.ideal_mac(&stim)?,
                        ReadMode::WithIrDrop => tile.mac_with_ir_drop(&stim)?.column_currents,
                    };
                    for c in 0..slot.width {
                        let (code, s) = convert(cur[c], &adc);
                        sat += u64::from(s);
                        let d = &mut codes[c][b as usize][p / 2];
                        if p % 2 == 0 {
                            d.pos += code;
                        } else {
                            d.neg += code;
                        }
                    }
                }
            }
        }
    }
    let weights = cfg.slice_weights();
    let out = codes
        .iter()
        .map(|grid| Ok(shift_add_accumulate(grid, cfg, &weights)? * i64::from(cal.lsb_units)))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, sat))
}

/// Exact integer dot products of a row-major `depth × width` block.
pub fn reference_dot(weights: &[i32], depth: usize, width: usize, acts: &[u32]) -> Vec<i64> {
    (0..width)
        .map(|c| {
            (0..depth)
                .map(|k| i64::from(weights[k * width + c]) * i64::from(acts[k]))
                .sum()
        })
        .collect()
}
