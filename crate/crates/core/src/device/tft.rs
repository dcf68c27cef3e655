//! α-IGZO nanosheet thin-film transistor.
//!
//! Charge-sheet power-law model valid from subthreshold to strong inversion:
//!
//! ```text
//! I_D = (W/L) ω0 (T / 2Te) (εs/Ci)^(1 - 2Te/T)
//!       · { [V_I F(V_GS/V_I)]^(2Te/T) - [V_I F(V_GD/V_I)]^(2Te/T) }
//! V_GS = Vg - Vt - Vs,   V_GD = Vg - Vt - Vd,   F(x) = ln(1 + e^x)
//! V_I  = Vi · 2Te / (2Te - T)
//! ```
//!
//! The second bracket uses the drain-side overdrive, so the current is
//! antisymmetric under source/drain exchange.

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};
use crate::params::ParamSet;

/// Number of nanosheet layers stacked in one column cell.
pub const STACK_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TftParams {
    /// Channel width (m).
    pub width: f64,
    /// Channel length (m).
    pub length: f64,
    /// Mobility prefactor; units absorb the power-law exponent so I_D is in A.
    pub omega0: f64,
    /// Lattice temperature (K).
    pub temperature: f64,
    /// Characteristic temperature of the exponential trap tail (K).
    pub trap_temperature: f64,
    /// Semiconductor permittivity (F/m).
    pub eps_s: f64,
    /// Gate insulator capacitance per area (F/m²).
    pub c_ins: f64,
    /// Threshold voltage (V).
    pub v_threshold: f64,
    /// Thermal-like voltage of the trap distribution (V).
    pub v_i: f64,
}

const KEYS: [&str; 9] = [
    "width",
    "length",
    "omega0",
    "temperature",
    "trap_temperature",
    "eps_s",
    "c_ins",
    "v_threshold",
    "v_i",
];

impl TftParams {
    /// Reference set, identical to `params/tft_reference.params`.
    pub fn reference() -> Self {
        TftParams {
            width: 50e-9,
            length: 100e-9,
            omega0: 1.5e-19,
            temperature: 300.0,
            trap_temperature: 450.0,
            eps_s: 8.854e-11,
            c_ins: 1.7708e-2,
            v_threshold: 0.5,
            v_i: 0.06,
        }
    }

    pub fn from_param_set(set: &ParamSet) -> Result<Self> {
        set.reject_unknown(&KEYS)?;
        let p = TftParams {
            width: set.get("width")?,
            length: set.get("length")?,
            omega0: set.get("omega0")?,
            temperature: set.get("temperature")?,
            trap_temperature: set.get("trap_temperature")?,
            eps_s: set.get("eps_s")?,
            c_ins: set.get("c_ins")?,
            v_threshold: set.get("v_threshold")?,
            v_i: set.get("v_i")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut set = ParamSet::default();
        let values = [
            self.width,
            self.length,
            self.omega0,
            self.temperature,
            self.trap_temperature,
            self.eps_s,
            self.c_ins,
            self.v_threshold,
            self.v_i,
        ];
        for (k, v) in KEYS.iter().zip(values) {
            set.insert(k, v);
        }
        set
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("width", self.width),
            ("length", self.length),
            ("omega0", self.omega0),
            ("temperature", self.temperature),
            ("trap_temperature", self.trap_temperature),
            ("eps_s", self.eps_s),
            ("c_ins", self.c_ins),
            ("v_threshold", self.v_threshold),
            ("v_i", self.v_i),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(CimError::param(name, "must be finite"));
            }
        }
        for (name, v) in [
            ("width", self.width),
            ("length", self.length),
            ("omega0", self.omega0),
            ("eps_s", self.eps_s),
            ("c_ins", self.c_ins),
            ("temperature", self.temperature),
            ("v_i", self.v_i),
        ] {
            if v <= 0.0 {
                return Err(CimError::param(name, "must be > 0"));
            }
        }
        if self.trap_temperature <= self.temperature / 2.0 {
            return Err(CimError::param("trap_temperature", "must exceed temperature / 2"));
        }
        Ok(())
    }

    /// Power-law exponent 2Te/T (> 1).
    pub fn exponent(&self) -> f64 {
        2.0 * self.trap_temperature / self.temperature
    }

    /// V_I = Vi · 2Te / (2Te − T).
    pub fn v_scale(&self) -> f64 {
        let two_te = 2.0 * self.trap_temperature;
        self.v_i * two_te / (two_te - self.temperature)
    }

    /// (W/L) ω0 (T/2Te) (εs/Ci)^(1−2Te/T), in A/V^(2Te/T).
    pub fn prefactor(&self) -> f64 {
        let gamma = self.exponent();
        (self.width / self.length) * self.omega0 / gamma * (self.eps_s / self.c_ins).powf(1.0 - gamma)
    }

    fn model(&self) -> Model {
        Model {
            k: self.prefactor(),
            gamma: self.exponent(),
            v_scale: self.v_scale(),
        }
    }
}

/// ln(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// d/dx softplus = logistic(x).
#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Precomputed constants for hot loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Model {
    k: f64,
    gamma: f64,
    v_scale: f64,
}

impl Model {
    /// One charge-sheet term h(u) = K [V_I F(u/V_I)]^γ.
    #[inline]
    fn sheet(&self, overdrive: f64) -> f64 {
        self.k * (self.v_scale * softplus(overdrive / self.v_scale)).powf(self.gamma)
    }

    /// h'(u) = K γ [V_I F(u/V_I)]^(γ−1) · logistic(u/V_I).
    #[inline]
    fn sheet_slope(&self, overdrive: f64) -> f64 {
        let x = overdrive / self.v_scale;
        self.k * self.gamma * (self.v_scale * softplus(x)).powf(self.gamma - 1.0) * logistic(x)
    }

    #[inline]
    pub(crate) fn current(&self, vg_minus_vt: f64, vs: f64, vd: f64) -> f64 {
        if vs == vd {
            return 0.0;
        }
        self.sheet(vg_minus_vt - vs) - self.sheet(vg_minus_vt - vd)
    }

    /// (∂I/∂Vg, ∂I/∂Vs, ∂I/∂Vd)
    #[inline]
    pub(crate) fn partials(&self, vg_minus_vt: f64, vs: f64, vd: f64) -> (f64, f64, f64) {
        let hs = self.sheet_slope(vg_minus_vt - vs);
        let hd = self.sheet_slope(vg_minus_vt - vd);
        (hs - hd, -hs, hd)
    }
}

pub(crate) fn model(p: &TftParams) -> Model {
    p.model()
}

fn check_voltages(vg: f64, vs: f64, vd: f64) -> Result<()> {
    if vg.is_nan() || vs.is_nan() || vd.is_nan() {
        return Err(CimError::input("NaN terminal voltage"));
    }
    if !(vg.is_finite() && vs.is_finite() && vd.is_finite()) {
        return Err(CimError::input("non-finite terminal voltage"));
    }
    Ok(())
}

/// Drain current of one nanosheet layer, positive when flowing drain → source.
pub fn tft_drain_current(p: &TftParams, vg: f64, vs: f64, vd: f64) -> Result<f64> {
    p.validate()?;
    check_voltages(vg, vs, vd)?;
    Ok(p.model().current(vg - p.v_threshold, vs, vd))
}

/// Analytic ∂I_D/∂Vg.
pub fn tft_transconductance(p: &TftParams, vg: f64, vs: f64, vd: f64) -> Result<f64> {
    p.validate()?;
    check_voltages(vg, vs, vd)?;
    Ok(p.model().partials(vg - p.v_threshold, vs, vd).0)
}

/// Analytic (∂I_D/∂Vg, ∂I_D/∂Vs, ∂I_D/∂Vd).
pub fn tft_partials(p: &TftParams, vg: f64, vs: f64, vd: f64) -> Result<(f64, f64, f64)> {
    p.validate()?;
    check_voltages(vg, vs, vd)?;
    Ok(p.model().partials(vg - p.v_threshold, vs, vd))
}

/// Current collected from the stacked layers of one column cell: Σ_j I_D(j).
pub fn tft_column_current(
    p: &TftParams,
    gate_voltages: &[f64; STACK_DEPTH],
    vs: f64,
    vd: f64,
) -> Result<f64> {
    p.validate()?;
    let model = p.model();
    let mut total = 0.0;
    for &vg in gate_voltages {
        check_voltages(vg, vs, vd)?;
        total += model.current(vg - p.v_threshold, vs, vd);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_limits() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        for x in [-200.0, -30.0, -1.0, 0.5, 30.0, 200.0] {
            assert!(softplus(x).is_finite());
        }
        assert!((softplus(-40.0) - (-40f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn equal_source_and_drain_is_zero() {
        let p = TftParams::reference();
        for vg in [-1.0, 0.0, 0.7, 2.0] {
            assert_eq!(tft_drain_current(&p, vg, 0.3, 0.3).unwrap(), 0.0);
        }
    }

    #[test]
    fn deep_subthreshold_is_negligible() {
        let p = TftParams::reference();
        let vs = 0.2;
        let vg = p.v_threshold + vs - 2.0;
        let i = tft_drain_current(&p, vg, vs, vs + 0.1).unwrap();
        assert!(i.abs() < 1e-12, "{i}");
    }

    #[test]
    fn rejects_bad_parameters_and_nan() {
        let mut p = TftParams::reference();
        p.trap_temperature = 100.0;
        assert!(matches!(
            tft_drain_current(&p, 1.0, 0.0, 0.1),
            Err(CimError::InvalidParameter { .. })
        ));
        let p = TftParams::reference();
        assert!(matches!(
            tft_drain_current(&p, f64::NAN, 0.0, 0.1),
            Err(CimError::InvalidInput(_))
        ));
        let mut p = TftParams::reference();
        p.width = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn one_layer_on_matches_single_call() {
        let p = TftParams::reference();
        let mut gates = [-2.0; STACK_DEPTH];
        gates[3] = 1.8;
        let col = tft_column_current(&p, &gates, 0.0, 0.1).unwrap();
        let single = tft_drain_current(&p, 1.8, 0.0, 0.1).unwrap();
        assert!(((col - single) / single).abs() < 1e-12);
    }

    #[test]
    fn all_off_column_is_tiny() {
        let p = TftParams::reference();
        let gates = [p.v_threshold - 2.0; STACK_DEPTH];
        let col = tft_column_current(&p, &gates, 0.0, 0.1).unwrap();
        assert!(col.abs() < 8e-12);
    }

    #[test]
    fn param_set_round_trip() {
        let p = TftParams::reference();
        let q = TftParams::from_param_set(&p.to_param_set()).unwrap();
        assert_eq!(p, q);
    }
}
