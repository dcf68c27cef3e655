//! Tile snapshots.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "CIMT" | version u8 | n_rows u32 | n_cols u32 | n_layers u32
//!        | r_wl f64 | r_bl f64 | r_sl f64 | gap f64 × (rows·cols·layers)
//! ```
//!
//! Gaps are stored in (row, column, layer) order, layer fastest. Level indices
//! are recovered by matching each gap against the level table; d2d factors are
//! not stored and come back as 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::device::rram::{level_gaps, LevelScheme, Provenance, RramParams, RramState};
use crate::device::tft::TftParams;
use crate::error::{CimError, Result};

use super::{Tile, TileGeometry};

pub const MAGIC: &[u8; 4] = b"CIMT";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 3 * 4 + 3 * 8;

impl Tile {
    pub fn to_cimt_bytes(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.n_cells());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for n in [g.n_rows, g.n_cols, g.n_layers] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for r in [g.r_wl, g.r_bl, g.r_sl] {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for s in self.cells() {
            out.extend_from_slice(&s.gap.to_le_bytes());
        }
        out
    }

    /// Parse a snapshot; `origin` names the source in error messages.
    pub fn from_cimt_bytes(bytes: &[u8], tft: TftParams, rram: RramParams, origin: &Path) -> Result<Tile> {
        let fail = |offset: usize, reason: &str| CimError::Format {
            path: origin.to_path_buf(),
            reason: format!("offset {offset}: {reason}"),
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), "truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail(0, "bad magic, expected CIMT"));
        }
        if bytes[4] != VERSION {
            return Err(fail(4, &format!("unsupported version {}", bytes[4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let geometry = TileGeometry {
            n_rows: u32_at(5),
            n_cols: u32_at(9),
            n_layers: u32_at(13),
            r_wl: f64_at(17),
            r_bl: f64_at(25),
            r_sl: f64_at(33),
        };
        geometry.validate().map_err(|e| fail(5, &e.to_string()))?;
        let n = geometry
            .n_rows
            .checked_mul(geometry.n_cols)
            .and_then(|x| x.checked_mul(geometry.n_layers))
            .ok_or_else(|| fail(5, "cell count overflows"))?;
        let expected = n
            .checked_mul(8)
            .and_then(|x| x.checked_add(HEADER_LEN))
            .ok_or_else(|| fail(5, "cell count overflows"))?;
        if bytes.len() != expected {
            return Err(fail(
                bytes.len().min(expected),
                &format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let table = level_gaps(&rram, LevelScheme::UniformConductance);
        let mut cells = Vec::with_capacity(n);
        for k in 0..n {
            let offset = HEADER_LEN + 8 * k;
            let gap = f64_at(offset);
            if !(gap >= rram.gap_min && gap <= rram.gap_max) {
                return Err(fail(offset, &format!("gap {gap:e} outside the device window")));
            }
            cells.push(state_for_gap(&table, gap));
        }
        Tile::from_cells(geometry, tft, rram, cells)
    }

    pub fn save_cimt(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_cimt_bytes())?;
        Ok(())
    }

    pub fn load_cimt(path: impl AsRef<Path>, tft: TftParams, rram: RramParams) -> Result<Tile> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Tile::from_cimt_bytes(&bytes, tft, rram, path)
    }

    /// `row,col,layer,gap,level,d2d_factor`, one line per cell.
    pub fn to_csv(&self) -> String {
        let g = &self.geometry;
        let mut out = String::from("row,col,layer,gap,level,d2d_factor\n");
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                for l in 0..g.n_layers {
                    let s = &self.cells()[g.index(r, c, l)];
                    let _ = writeln!(out, "{r},{c},{l},{},{},{}", s.gap, s.level, s.d2d_factor);
                }
            }
        }
        out
    }
}

fn state_for_gap(table: &[f64], gap: f64) -> RramState {
    let (level, nearest) = table
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - gap).abs().total_cmp(&(b.1 - gap).abs()))
        .map(|(i, &g)| (i, g))
        .expect("non-empty level table");
    RramState {
        gap,
        level: level as u16,
        d2d_factor: 1.0,
        provenance: if nearest == gap {
            Provenance::Table(LevelScheme::UniformConductance)
        } else {
            Provenance::Pulsed
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile() -> Tile {
        let mut t = Tile::new(TileGeometry::default(), TftParams::reference(), RramParams::reference()).unwrap();
        t.program_levels(LevelScheme::UniformConductance, |r, c, l| (r * 5 + c * 3 + l) % 32)
            .unwrap();
        t
    }

    #[test]
    fn binary_round_trip() {
        let t = tile();
        let bytes = t.to_cimt_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 512);
        let u = Tile::from_cimt_bytes(&bytes, t.tft, t.rram, Path::new("mem")).unwrap();
        assert_eq!(t, u);
    }

    #[test]
    fn corrupt_snapshots_name_the_offset() {
        let t = tile();
        let mut bytes = t.to_cimt_bytes();
        bytes[0] = b'X';
        let err = Tile::from_cimt_bytes(&bytes, t.tft, t.rram, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");
        let bytes = t.to_cimt_bytes();
        let err = Tile::from_cimt_bytes(&bytes[..100], t.tft, t.rram, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("offset 100"), "{err}");
    }

    #[test]
    fn csv_has_one_line_per_cell() {
        let csv = tile().to_csv();
        assert_eq!(csv.lines().count(), 513);
        assert!(csv.starts_with("row,col,layer,gap,level,d2d_factor\n0,0,0,"));
    }
}
