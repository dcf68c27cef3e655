//! Series 1T1R branch: TFT from the pillar node to an internal node, RRAM from
//! the internal node to the select line.

use serde::{Deserialize, Serialize};

use crate::device::rram::{rram_current_and_slope, RramParams, RramState};
use crate::device::tft::{self, TftParams};
use crate::error::{CimError, Result};

/// Gate bias applied to the stacked nanosheets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    /// Gate voltage of a selected layer (V).
    pub v_gate_on: f64,
    /// Gate voltage of a deselected layer (V).
    pub v_gate_off: f64,
    /// Bit-line drive of a set input bit during a read (V).
    pub v_read: f64,
    /// Upper bound on simultaneously selected layers per column.
    pub max_active_layers: usize,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            v_gate_on: 2.0,
            v_gate_off: 0.0,
            v_read: 0.5,
            max_active_layers: 8,
        }
    }
}

impl DriveConfig {
    pub fn gate_voltage(&self, on: bool) -> f64 {
        if on {
            self.v_gate_on
        } else {
            self.v_gate_off
        }
    }
}

/// Access element in series with each RRAM cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AccessDevice {
    /// Nanosheet TFT compact model.
    #[default]
    Tft,
    /// Zero on-resistance, zero off-current switch.
    IdealSwitch,
}

/// Operating point of one branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    /// Current from the top terminal to the bottom terminal (A).
    pub current: f64,
    /// ∂I/∂V_top (S).
    pub d_top: f64,
    /// ∂I/∂V_bottom (S).
    pub d_bottom: f64,
}

const MAX_ITERATIONS: usize = 200;
const REL_TOLERANCE: f64 = 1e-12;

/// Solve the series TFT + RRAM branch between `v_top` and `v_bottom`.
///
/// Safeguarded Newton on the internal node voltage, bracketed by the two
/// terminal voltages; the TFT current decreases and the RRAM current increases
/// monotonically with the internal node, so the root is unique.
pub(crate) fn operating_point(
    access: AccessDevice,
    tft: &tft::Model,
    v_threshold: f64,
    rram: &RramParams,
    state: &RramState,
    v_gate: f64,
    v_top: f64,
    v_bottom: f64,
) -> Result<BranchPoint> {
    match access {
        AccessDevice::IdealSwitch => ideal_switch(rram, state, v_gate, v_top, v_bottom),
        AccessDevice::Tft if v_top == v_bottom => {
            // Series combination of the two small-signal conductances.
            let (_, r_slope) = rram_current_and_slope(rram, state, 0.0);
            let (_, _, g_d) = tft.partials(v_gate - v_threshold, v_top, v_top);
            let g = if g_d + r_slope > 0.0 {
                g_d * r_slope / (g_d + r_slope)
            } else {
                0.0
            };
            Ok(BranchPoint {
                current: 0.0,
                d_top: g,
                d_bottom: -g,
            })
        }
        AccessDevice::Tft => solve_series(tft, v_gate - v_threshold, rram, state, v_top, v_bottom),
    }
}

fn ideal_switch(
    rram: &RramParams,
    state: &RramState,
    v_gate: f64,
    v_top: f64,
    v_bottom: f64,
) -> Result<BranchPoint> {
    // The ideal switch conducts when its gate is driven above 0 V.
    if v_gate > 0.0 {
        let (i, g) = rram_current_and_slope(rram, state, v_top - v_bottom);
        Ok(BranchPoint {
            current: i,
            d_top: g,
            d_bottom: -g,
        })
    } else {
        Ok(BranchPoint {
            current: 0.0,
            d_top: 0.0,
            d_bottom: 0.0,
        })
    }
}

fn solve_series(
    tft: &tft::Model,
    overdrive: f64,
    rram: &RramParams,
    state: &RramState,
    v_top: f64,
    v_bottom: f64,
) -> Result<BranchPoint> {
    // g(vm) = I_tft(top → vm) − I_rram(vm → bottom), strictly decreasing in vm.
    let residual = |vm: f64| -> (f64, f64, f64) {
        let t = tft.current(overdrive, vm, v_top);
        let (r, r_slope) = rram_current_and_slope(rram, state, vm - v_bottom);
        let (_, t_s, _) = tft.partials(overdrive, vm, v_top);
        (t - r, t_s - r_slope, r)
    };
    let (mut lo, mut hi) = if v_top > v_bottom {
        (v_bottom, v_top)
    } else {
        (v_top, v_bottom)
    };
    let (g_lo, _, _) = residual(lo);
    let (g_hi, _, _) = residual(hi);
    if g_lo * g_hi > 0.0 {
        return Err(CimError::Internal(format!(
            "branch residual has no sign change on [{lo}, {hi}] ({g_lo:e}, {g_hi:e})"
        )));
    }
    let span = hi - lo;
    let mut vm = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (g, dg, r) = residual(vm);
        if g == 0.0 || g.abs() <= REL_TOLERANCE * r.abs() {
            converged = true;
            break;
        }
        if g > 0.0 {
            lo = vm;
        } else {
            hi = vm;
        }
        let newton = vm - g / dg;
        let next = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        // The TFT sees the node through `overdrive − vm`, so voltages finer
        // than this are invisible to it; a nearly unbiased branch reaches that
        // floor before the relative residual target.
        let resolution = 4.0 * f64::EPSILON * vm.abs().max(span).max(overdrive.abs());
        if (next - vm).abs() <= resolution || hi - lo <= resolution {
            vm = next;
            converged = true;
            break;
        }
        vm = next;
    }
    if !converged {
        return Err(CimError::Internal("branch solve exceeded iteration limit".into()));
    }
    let (r, r_slope) = rram_current_and_slope(rram, state, vm - v_bottom);
    let (_, t_s, t_d) = tft.partials(overdrive, vm, v_top);
    let denom = r_slope - t_s;
    Ok(BranchPoint {
        current: r,
        d_top: r_slope * t_d / denom,
        d_bottom: r_slope * t_s / denom,
    })
}

/// Current of one 1T1R branch with `v_applied` across it (bottom terminal at 0 V).
pub fn solve_branch(
    tft: &TftParams,
    rram: &RramParams,
    state: &RramState,
    drive: &DriveConfig,
    v_applied: f64,
    gate_on: bool,
) -> Result<f64> {
    if !(v_applied >= 0.0) || !v_applied.is_finite() {
        return Err(CimError::input(format!("v_applied must be finite and >= 0, got {v_applied}")));
    }
    tft.validate()?;
    state.validate(rram)?;
    let model = tft::model(tft);
    Ok(operating_point(
        AccessDevice::Tft,
        &model,
        tft.v_threshold,
        rram,
        state,
        drive.gate_voltage(gate_on),
        v_applied,
        0.0,
    )?
    .current)
}
