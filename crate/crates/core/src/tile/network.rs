//! Nonlinear nodal solve of the tile with parasitic wire resistance.
//!
//! Nodes per cell: its bit-line tap, one pillar node per layer and its
//! select-line tap. Bit lines run from a row driver across the columns;
//! pillars chain the layers above the bit-line tap; select lines run across
//! the rows into a grounded sense node per column. Zero-resistance segments
//! merge their end nodes.

use crate::device::tft;
use crate::error::{CimError, Result};

use super::banded::BandedMatrix;
use super::branch::{self, BranchPoint};
use super::{ReadStimulus, Tile, TileGeometry};

/// Nonlinear branch between a pillar node (top) and a select-line tap (bottom).
pub trait BranchModel {
    /// Operating point of the branch at flat cell index `cell`.
    fn eval(&self, cell: usize, v_top: f64, v_bottom: f64) -> Result<BranchPoint>;
}

/// Ohmic branches, one conductance per cell (S).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBranches {
    pub conductance: Vec<f64>,
}

impl BranchModel for LinearBranches {
    fn eval(&self, cell: usize, v_top: f64, v_bottom: f64) -> Result<BranchPoint> {
        let g = self.conductance[cell];
        Ok(BranchPoint {
            current: g * (v_top - v_bottom),
            d_top: g,
            d_bottom: -g,
        })
    }
}

/// Device branches of a tile under a given gate selection.
pub(crate) struct DeviceBranches<'a> {
    tile: &'a Tile,
    model: tft::Model,
    gate: Vec<f64>,
}

impl<'a> DeviceBranches<'a> {
    pub(crate) fn new(tile: &'a Tile, stim: &ReadStimulus) -> Self {
        let g = tile.geometry;
        let mut gate = vec![0.0; g.n_cells()];
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                for l in 0..g.n_layers {
                    gate[g.index(r, c, l)] = tile.drive.gate_voltage(stim.layer_select[c][l]);
                }
            }
        }
        DeviceBranches {
            tile,
            model: tft::model(&tile.tft),
            gate,
        }
    }
}

impl BranchModel for DeviceBranches<'_> {
    fn eval(&self, cell: usize, v_top: f64, v_bottom: f64) -> Result<BranchPoint> {
        let t = self.tile;
        branch::operating_point(
            t.access,
            &self.model,
            t.tft.v_threshold,
            &t.rram,
            &t.cells[cell],
            self.gate[cell],
            v_top,
            v_bottom,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Under-relaxation of each linearized update.
    pub relaxation: f64,
    /// Stop relaxing once the largest node update falls below this (V).
    pub voltage_tolerance: f64,
    pub max_iterations: usize,
    /// Undamped Newton polishing stops once every node's KCL residual is below this (A).
    pub current_tolerance: f64,
    pub max_polish_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            relaxation: 0.5,
            voltage_tolerance: 1e-9,
            max_iterations: 10_000,
            current_tolerance: 1e-14,
            max_polish_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    /// Σ branch current per column (A).
    pub column_currents: Vec<f64>,
    /// Bit-line tap voltage, `[row * n_cols + col]`.
    pub bl: Vec<f64>,
    /// Pillar node voltage, flat cell order.
    pub pillar: Vec<f64>,
    /// Select-line tap voltage, `[row * n_cols + col]`.
    pub sl: Vec<f64>,
    /// Linearize-and-solve iterations, polishing included.
    pub iterations: usize,
    /// Largest node update per iteration (V).
    pub trace: Vec<f64>,
    /// Largest KCL imbalance over all free nodes at the returned point (A).
    pub max_kcl_residual: f64,
}

struct Layout {
    g: TileGeometry,
    per_cell: usize,
}

impl Layout {
    fn new(g: TileGeometry) -> Self {
        Layout {
            g,
            per_cell: g.n_layers + 2,
        }
    }
    fn cell_base(&self, r: usize, c: usize) -> usize {
        (r * self.g.n_cols + c) * self.per_cell
    }
    fn bl(&self, r: usize, c: usize) -> usize {
        self.cell_base(r, c)
    }
    fn pillar(&self, r: usize, c: usize, l: usize) -> usize {
        self.cell_base(r, c) + 1 + l
    }
    fn sl(&self, r: usize, c: usize) -> usize {
        self.cell_base(r, c) + 1 + self.g.n_layers
    }
    fn driver(&self, r: usize) -> usize {
        self.g.n_rows * self.g.n_cols * self.per_cell + r
    }
    fn sense(&self, c: usize) -> usize {
        self.driver(self.g.n_rows) + c
    }
    fn n_nodes(&self) -> usize {
        self.sense(self.g.n_cols)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Fixed(f64),
    Free(usize),
}

/// Solve the tile network for an arbitrary branch model.
pub fn solve_network<B: BranchModel>(
    geometry: &TileGeometry,
    stim: &ReadStimulus,
    branches: &B,
    opts: &SolverOptions,
) -> Result<NetworkSolution> {
    geometry.validate()?;
    if stim.input_bits.len() != geometry.n_rows {
        return Err(CimError::input("input bit count does not match the tile rows"));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(CimError::param("relaxation", "must lie in (0, 1]"));
    }
    let g = *geometry;
    let lay = Layout::new(g);
    let n_nodes = lay.n_nodes();

    // Wires as (a, b, resistance).
    let mut wires: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            let prev = if c == 0 { lay.driver(r) } else { lay.bl(r, c - 1) };
            wires.push((prev, lay.bl(r, c), g.r_bl));
            for l in 0..g.n_layers {
                let below = if l == 0 { lay.bl(r, c) } else { lay.pillar(r, c, l - 1) };
                wires.push((below, lay.pillar(r, c, l), g.r_wl));
            }
            let next = if r + 1 == g.n_rows { lay.sense(c) } else { lay.sl(r + 1, c) };
            wires.push((lay.sl(r, c), next, g.r_sl));
        }
    }

    let mut parent: Vec<usize> = (0..n_nodes).collect();
    for &(a, b, res) in &wires {
        if res == 0.0 {
            union(&mut parent, a, b);
        }
    }
    let mut slots: Vec<Option<Slot>> = vec![None; n_nodes];
    let fixed: Vec<(usize, f64)> = (0..g.n_rows)
        .map(|r| (lay.driver(r), if stim.input_bits[r] { stim.v_read } else { 0.0 }))
        .chain((0..g.n_cols).map(|c| (lay.sense(c), 0.0)))
        .collect();
    for &(node, v) in &fixed {
        let root = find(&mut parent, node);
        match slots[root] {
            Some(Slot::Fixed(u)) if u != v => {
                return Err(CimError::input("zero-resistance path shorts a driven row to a sense node"));
            }
            _ => slots[root] = Some(Slot::Fixed(v)),
        }
    }
    // Free classes numbered by their smallest member, which keeps the band narrow.
    let mut n_free = 0;
    for node in 0..n_nodes {
        let root = find(&mut parent, node);
        if slots[root].is_none() {
            slots[root] = Some(Slot::Free(n_free));
            n_free += 1;
        }
    }
    let slot_of: Vec<Slot> = (0..n_nodes)
        .map(|node| slots[find(&mut parent, node)].expect("every class assigned"))
        .collect();

    let resistive: Vec<(Slot, Slot, f64)> = wires
        .iter()
        .filter(|w| w.2 > 0.0)
        .map(|&(a, b, res)| (slot_of[a], slot_of[b], 1.0 / res))
        .collect();
    let cell_nodes: Vec<(Slot, Slot)> = (0..g.n_rows)
        .flat_map(|r| (0..g.n_cols).flat_map(move |c| (0..g.n_layers).map(move |l| (r, c, l))))
        .map(|(r, c, l)| (slot_of[lay.pillar(r, c, l)], slot_of[lay.sl(r, c)]))
        .collect();

    let (mut kl, mut ku) = (0usize, 0usize);
    let mut widen = |a: Slot, b: Slot| {
        if let (Slot::Free(i), Slot::Free(j)) = (a, b) {
            if i > j {
                kl = kl.max(i - j);
                ku = ku.max(i - j);
            } else {
                kl = kl.max(j - i);
                ku = ku.max(j - i);
            }
        }
    };
    for &(a, b, _) in &resistive {
        widen(a, b);
    }
    for &(a, b) in &cell_nodes {
        widen(a, b);
    }

    // Start from the driven rows at their drive level and select lines at ground.
    let mut v = vec![0.0; n_free];
    for r in 0..g.n_rows {
        let drive = if stim.input_bits[r] { stim.v_read } else { 0.0 };
        for c in 0..g.n_cols {
            let mut nodes = vec![lay.bl(r, c)];
            nodes.extend((0..g.n_layers).map(|l| lay.pillar(r, c, l)));
            for n in nodes {
                if let Slot::Free(i) = slot_of[n] {
                    v[i] = drive;
                }
            }
        }
    }

    let volt = |s: Slot, v: &[f64]| match s {
        Slot::Fixed(x) => x,
        Slot::Free(i) => v[i],
    };

    let mut jac = BandedMatrix::zeros(n_free, kl, ku);
    let mut f = vec![0.0; n_free];
    let mut points = vec![
        BranchPoint {
            current: 0.0,
            d_top: 0.0,
            d_bottom: 0.0
        };
        cell_nodes.len()
    ];

    // Assemble KCL residual (current leaving each free node) and its Jacobian.
    let assemble = |v: &[f64], jac: &mut BandedMatrix, f: &mut [f64], points: &mut [BranchPoint]| -> Result<f64> {
        jac.clear();
        f.fill(0.0);
        for &(a, b, cond) in &resistive {
            let i = cond * (volt(a, v) - volt(b, v));
            if let Slot::Free(p) = a {
                f[p] += i;
                jac.add(p, p, cond);
                if let Slot::Free(q) = b {
                    jac.add(p, q, -cond);
                }
            }
            if let Slot::Free(q) = b {
                f[q] -= i;
                jac.add(q, q, cond);
                if let Slot::Free(p) = a {
                    jac.add(q, p, -cond);
                }
            }
        }
        for (cell, &(top, bot)) in cell_nodes.iter().enumerate() {
            let bp = branches.eval(cell, volt(top, v), volt(bot, v))?;
            points[cell] = bp;
            if let Slot::Free(p) = top {
                f[p] += bp.current;
                jac.add(p, p, bp.d_top);
                if let Slot::Free(q) = bot {
                    jac.add(p, q, bp.d_bottom);
                }
            }
            if let Slot::Free(q) = bot {
                f[q] -= bp.current;
                jac.add(q, q, -bp.d_bottom);
                if let Slot::Free(p) = top {
                    jac.add(q, p, -bp.d_top);
                }
            }
        }
        Ok(f.iter().fold(0.0f64, |m, x| m.max(x.abs())))
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut residual = assemble(&v, &mut jac, &mut f, &mut points)?;
    if n_free > 0 {
        let mut relaxed = false;
        while !relaxed {
            if iterations >= opts.max_iterations {
                return Err(CimError::Convergence {
                    iterations,
                    last_delta: trace.last().copied().unwrap_or(f64::NAN),
                    trace,
                });
            }
            let mut dv: Vec<f64> = f.iter().map(|x| -x).collect();
            jac.solve_in_place(&mut dv)?;
            let mut delta = 0.0f64;
            for (x, d) in v.iter_mut().zip(&dv) {
                let step = opts.relaxation * d;
                *x += step;
                delta = delta.max(step.abs());
            }
            iterations += 1;
            trace.push(delta);
            if !delta.is_finite() {
                return Err(CimError::Convergence {
                    iterations,
                    last_delta: delta,
                    trace,
                });
            }
            residual = assemble(&v, &mut jac, &mut f, &mut points)?;
            relaxed = delta < opts.voltage_tolerance;
        }
        for _ in 0..opts.max_polish_steps {
            if residual < opts.current_tolerance {
                break;
            }
            let mut dv: Vec<f64> = f.iter().map(|x| -x).collect();
            jac.solve_in_place(&mut dv)?;
            let mut delta = 0.0f64;
            for (x, d) in v.iter_mut().zip(&dv) {
                *x += d;
                delta = delta.max(d.abs());
            }
            iterations += 1;
            trace.push(delta);
            let next = assemble(&v, &mut jac, &mut f, &mut points)?;
            let stalled = next >= residual;
            residual = next;
            if stalled {
                break;
            }
        }
    }

    let mut column_currents = vec![0.0; g.n_cols];
    for (c, total) in column_currents.iter_mut().enumerate() {
        for r in 0..g.n_rows {
            let mut row = 0.0;
            for l in 0..g.n_layers {
                row += points[g.index(r, c, l)].current;
            }
            *total += row;
        }
    }
    let grid = |node: &dyn Fn(usize, usize) -> usize| -> Vec<f64> {
        (0..g.n_rows)
            .flat_map(|r| (0..g.n_cols).map(move |c| (r, c)))
            .map(|(r, c)| volt(slot_of[node(r, c)], &v))
            .collect()
    };
    let bl = grid(&|r, c| lay.bl(r, c));
    let sl = grid(&|r, c| lay.sl(r, c));
    let pillar = (0..g.n_rows)
        .flat_map(|r| (0..g.n_cols).flat_map(move |c| (0..g.n_layers).map(move |l| (r, c, l))))
        .map(|(r, c, l)| volt(slot_of[lay.pillar(r, c, l)], &v))
        .collect();

    Ok(NetworkSolution {
        column_currents,
        bl,
        pillar,
        sl,
        iterations,
        trace,
        max_kcl_residual: residual,
    })
}
