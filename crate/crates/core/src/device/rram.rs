//! Bi-layer (Ta₂O₅/Al₂O₃) RRAM: gap-based filament conduction and switching.
//!
//! Conduction: `I = d2d · I0 · exp(−gap/g0) · sinh(V/V0)`.
//! Switching (isothermal): `dgap/dt = −set_rate · sinh(V/Vset)` for V > 0 and
//! `+reset_rate · sinh(|V|/Vreset)` for V < 0, clamped to `[gap_min, gap_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RramParams {
    /// Current prefactor (A).
    pub i0: f64,
    /// Gap attenuation length (m).
    pub g0: f64,
    /// Conduction voltage scale (V).
    pub v0: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    /// Gap velocity prefactor under positive bias (m/s).
    pub set_rate: f64,
    /// Gap velocity prefactor under negative bias (m/s).
    pub reset_rate: f64,
    pub field_scale_set: f64,
    pub field_scale_reset: f64,
    /// Nominal programmable level count.
    pub n_levels: usize,
}

const KEYS: [&str; 10] = [
    "i0",
    "g0",
    "v0",
    "gap_min",
    "gap_max",
    "set_rate",
    "reset_rate",
    "field_scale_set",
    "field_scale_reset",
    "n_levels",
];

impl RramParams {
    /// Reference set, identical to `params/rram_reference.params`.
    ///
    /// At 0.5 V the LRS (gap_min) reads 9.44 µA and LRS/HRS = exp(1.5 nm / g0) ≈ 1.6·10⁶.
    pub fn reference() -> Self {
        RramParams {
            i0: 1.75e-5,
            g0: 0.105e-9,
            v0: 0.25,
            gap_min: 0.2e-9,
            gap_max: 1.7e-9,
            set_rate: 1.0e-3,
            reset_rate: 1.0e-3,
            field_scale_set: 0.4,
            field_scale_reset: 0.4,
            n_levels: 32,
        }
    }

    pub fn from_param_set(set: &ParamSet) -> Result<Self> {
        set.reject_unknown(&KEYS)?;
        let n = set.get("n_levels")?;
        if n.fract() != 0.0 || n < 0.0 {
            return Err(CimError::param("n_levels", "must be a non-negative integer"));
        }
        let p = RramParams {
            i0: set.get("i0")?,
            g0: set.get("g0")?,
            v0: set.get("v0")?,
            gap_min: set.get("gap_min")?,
            gap_max: set.get("gap_max")?,
            set_rate: set.get("set_rate")?,
            reset_rate: set.get("reset_rate")?,
            field_scale_set: set.get("field_scale_set")?,
            field_scale_reset: set.get("field_scale_reset")?,
            n_levels: n as usize,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut set = ParamSet::default();
        let values = [
            self.i0,
            self.g0,
            self.v0,
            self.gap_min,
            self.gap_max,
            self.set_rate,
            self.reset_rate,
            self.field_scale_set,
            self.field_scale_reset,
            self.n_levels as f64,
        ];
        for (k, v) in KEYS.iter().zip(values) {
            set.insert(k, v);
        }
        set
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("i0", self.i0),
            ("g0", self.g0),
            ("v0", self.v0),
            ("gap_min", self.gap_min),
            ("gap_max", self.gap_max),
            ("set_rate", self.set_rate),
            ("reset_rate", self.reset_rate),
            ("field_scale_set", self.field_scale_set),
            ("field_scale_reset", self.field_scale_reset),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(CimError::param(name, "must be finite"));
            }
        }
        for (name, v) in [
            ("i0", self.i0),
            ("g0", self.g0),
            ("v0", self.v0),
            ("gap_min", self.gap_min),
            ("field_scale_set", self.field_scale_set),
            ("field_scale_reset", self.field_scale_reset),
        ] {
            if v <= 0.0 {
                return Err(CimError::param(name, "must be > 0"));
            }
        }
        if self.gap_max <= self.gap_min {
            return Err(CimError::param("gap_max", "must exceed gap_min"));
        }
        if self.set_rate < 0.0 || self.reset_rate < 0.0 {
            return Err(CimError::param("set_rate", "rates must be >= 0"));
        }
        if self.n_levels < 2 {
            return Err(CimError::param("n_levels", "must be >= 2"));
        }
        Ok(())
    }

    /// Gap-dependent conductance factor `exp(−gap/g0)`.
    #[inline]
    pub fn gap_factor(&self, gap: f64) -> f64 {
        (-gap / self.g0).exp()
    }

    /// Read current of an unvaried cell at `gap`.
    pub fn nominal_current(&self, gap: f64, v: f64) -> f64 {
        self.i0 * self.gap_factor(gap) * (v / self.v0).sinh()
    }

    /// Current ratio between gap_min and gap_max at any nonzero bias.
    pub fn on_off_ratio(&self) -> f64 {
        ((self.gap_max - self.gap_min) / self.g0).exp()
    }
}

/// How the nominal level table is spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LevelScheme {
    UniformGap,
    #[default]
    UniformConductance,
}

/// Where a state's gap came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Placed directly from a level table.
    Table(LevelScheme),
    /// Reached by integrating write pulses.
    Pulsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RramState {
    /// Filament gap (m).
    pub gap: f64,
    /// Nominal programmed level, 0 = lowest conductance.
    pub level: u16,
    /// Multiplicative device-to-device conductance factor.
    pub d2d_factor: f64,
    pub provenance: Provenance,
}

impl RramState {
    pub fn hrs(p: &RramParams) -> Self {
        RramState {
            gap: p.gap_max,
            level: 0,
            d2d_factor: 1.0,
            provenance: Provenance::Table(LevelScheme::UniformConductance),
        }
    }

    pub fn validate(&self, p: &RramParams) -> Result<()> {
        if !(self.gap >= p.gap_min && self.gap <= p.gap_max) {
            return Err(CimError::input(format!(
                "gap {:e} outside [{:e}, {:e}]",
                self.gap, p.gap_min, p.gap_max
            )));
        }
        if !(self.d2d_factor > 0.0 && self.d2d_factor.is_finite()) {
            return Err(CimError::input("d2d_factor must be finite and > 0"));
        }
        if usize::from(self.level) >= p.n_levels {
            return Err(CimError::IndexOutOfRange {
                what: "RRAM level",
                index: usize::from(self.level),
                limit: p.n_levels,
            });
        }
        Ok(())
    }
}

/// Cell current at bias `v` (A).
#[inline]
pub fn rram_current(p: &RramParams, s: &RramState, v: f64) -> f64 {
    s.d2d_factor * p.i0 * p.gap_factor(s.gap) * (v / p.v0).sinh()
}

/// (current, dI/dV)
#[inline]
pub(crate) fn rram_current_and_slope(p: &RramParams, s: &RramState, v: f64) -> (f64, f64) {
    let scale = s.d2d_factor * p.i0 * p.gap_factor(s.gap);
    let x = v / p.v0;
    (scale * x.sinh(), scale * x.cosh() / p.v0)
}

/// Maximum gap change per Euler substep, as a fraction of the gap window.
const SUBSTEP_FRACTION: f64 = 1e-4;

/// Integrate the gap dynamics over one rectangular pulse of amplitude `v`.
pub fn rram_apply_pulse(p: &RramParams, s: &RramState, v: f64, dt: f64) -> Result<RramState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CimError::input(format!("pulse width must be > 0, got {dt}")));
    }
    if !v.is_finite() {
        return Err(CimError::input("pulse amplitude must be finite"));
    }
    if v == 0.0 {
        return Ok(*s);
    }
    let velocity = if v > 0.0 {
        -p.set_rate * (v / p.field_scale_set).sinh()
    } else {
        p.reset_rate * (-v / p.field_scale_reset).sinh()
    };
    let max_step = (p.gap_max - p.gap_min) * SUBSTEP_FRACTION;
    let total = velocity.abs() * dt;
    let substeps = ((total / max_step).ceil() as usize).max(1);
    let h = dt / substeps as f64;
    let mut gap = s.gap;
    for _ in 0..substeps {
        gap = (gap + velocity * h).clamp(p.gap_min, p.gap_max);
        if (velocity < 0.0 && gap == p.gap_min) || (velocity > 0.0 && gap == p.gap_max) {
            break;
        }
    }
    Ok(RramState {
        gap,
        provenance: Provenance::Pulsed,
        ..*s
    })
}

/// Monotone gap table, index 0 = gap_max (lowest conductance).
pub fn level_gaps(p: &RramParams, scheme: LevelScheme) -> Vec<f64> {
    let n = p.n_levels;
    let last = (n - 1) as f64;
    match scheme {
        LevelScheme::UniformGap => (0..n)
            .map(|k| {
                if k == 0 {
                    p.gap_max
                } else if k == n - 1 {
                    p.gap_min
                } else {
                    p.gap_max - (p.gap_max - p.gap_min) * k as f64 / last
                }
            })
            .collect(),
        LevelScheme::UniformConductance => {
            // Work relative to the gap_max factor so exp() never underflows.
            let span = (p.gap_max - p.gap_min) / p.g0;
            let top = span.exp();
            (0..n)
                .map(|k| {
                    if k == 0 {
                        p.gap_max
                    } else if k == n - 1 {
                        p.gap_min
                    } else {
                        let rel = 1.0 + (top - 1.0) * k as f64 / last;
                        p.gap_max - p.g0 * rel.ln()
                    }
                })
                .collect()
        }
    }
}

/// Place a cell directly at a nominal level, bypassing pulse iteration.
pub fn program_to_level(p: &RramParams, level: usize, scheme: LevelScheme) -> Result<RramState> {
    if level >= p.n_levels {
        return Err(CimError::IndexOutOfRange {
            what: "RRAM level",
            index: level,
            limit: p.n_levels,
        });
    }
    let gaps = level_gaps(p, scheme);
    Ok(RramState {
        gap: gaps[level],
        level: level as u16,
        d2d_factor: 1.0,
        provenance: Provenance::Table(scheme),
    })
}

/// A train of identical rectangular pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub voltage: f64,
    pub width: f64,
    pub count: usize,
}

impl PulseTrain {
    /// Amplitude of the calibrated SET staircase (V).
    pub const STAIRCASE_VOLTAGE: f64 = 1.5;

    /// SET staircase from gap_max that takes `n_levels − 1` equal steps of
    /// `(gap_max − gap_min)/n_levels`, stopping one step short of gap_min so
    /// no pulse lands on the clamp.
    pub fn calibrated_staircase(p: &RramParams) -> Self {
        let step = (p.gap_max - p.gap_min) / p.n_levels as f64;
        let speed = p.set_rate * (Self::STAIRCASE_VOLTAGE / p.field_scale_set).sinh();
        PulseTrain {
            voltage: Self::STAIRCASE_VOLTAGE,
            width: step / speed,
            count: p.n_levels - 1,
        }
    }

    /// Gap after each pulse, starting with the initial state.
    pub fn apply(&self, p: &RramParams, start: &RramState) -> Result<Vec<RramState>> {
        let mut out = Vec::with_capacity(self.count + 1);
        out.push(*start);
        let mut s = *start;
        for _ in 0..self.count {
            s = rram_apply_pulse(p, &s, self.voltage, self.width)?;
            out.push(s);
        }
        Ok(out)
    }
}
