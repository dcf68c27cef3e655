//! Device I-V curves: TFT transfer curves and the RRAM hysteresis loop.

use anyhow::{bail, Result};
use cim_core::device::{rram_apply_pulse, rram_current, tft_drain_current, RramState};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Range};
use crate::run::{Manifest, RunDir};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Device {
    Tft,
    Rram,
}

/// Command-line overrides of the configured sweep.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub start: Option<f64>,
    #[arg(long)]
    pub stop: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Single TFT drain-source bias instead of the configured list.
    #[arg(long)]
    pub vds: Option<f64>,
    #[arg(long)]
    pub vs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "I")]
    pub i: f64,
}

#[derive(Serialize)]
struct TftCurve {
    file: String,
    vds: f64,
    vs: f64,
    max_current: f64,
}

fn range(base: Range, a: &SweepArgs) -> Range {
    Range {
        start: a.start.unwrap_or(base.start),
        stop: a.stop.unwrap_or(base.stop),
        points: a.points.unwrap_or(base.points),
    }
}

/// Gate sweep at fixed source and drain; the drain sits at `vs + vds`.
pub fn tft_curve(cfg: &ExperimentConfig, vg: &[f64], vs: f64, vds: f64) -> Result<Vec<Point>> {
    let p = cfg.tft()?;
    vg.iter()
        .map(|&v| Ok(Point { v, i: tft_drain_current(&p, v, vs, vs + vds)? }))
        .collect()
}

/// Voltage path of the loop: 0 → stop → start → 0 in uniform steps.
pub fn loop_voltages(r: Range) -> Result<Vec<f64>> {
    let pts = r.values()?;
    if r.start > 0.0 || r.stop < 0.0 {
        bail!(CliError::input(format!(
            "RRAM loop range [{}, {}] must contain 0",
            r.start, r.stop
        )));
    }
    if pts.len() == 1 {
        return Ok(pts);
    }
    let step = (r.stop - r.start) / (r.points - 1) as f64;
    let leg = |to: f64, from: f64| -> Vec<f64> {
        let n = ((to - from).abs() / step).round() as usize;
        (1..=n).map(|k| from + (to - from) * k as f64 / n as f64).collect()
    };
    let mut v = vec![0.0];
    v.extend(leg(r.stop, 0.0));
    v.extend(leg(r.start, r.stop));
    v.extend(leg(0.0, r.start));
    Ok(v)
}

/// Each step applies its voltage for `step_time`, then reads the current at
/// that voltage. Starts from the HRS.
pub fn rram_loop(cfg: &ExperimentConfig, r: Range, step_time: f64) -> Result<Vec<Point>> {
    let p = cfg.rram()?;
    let mut s = RramState::hrs(&p);
    loop_voltages(r)?
        .into_iter()
        .map(|v| {
            s = rram_apply_pulse(&p, &s, v, step_time)?;
            Ok(Point { v, i: rram_current(&p, &s, v) })
        })
        .collect()
}

/// Signed area of the closed polygon through the points (V·A).
pub fn loop_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|k| {
            let (a, b) = (pts[k], pts[(k + 1) % n]);
            a.v * b.i - b.v * a.i
        })
        .sum::<f64>()
        / 2.0
}

pub fn run(cfg: &ExperimentConfig, device: Device, args: &SweepArgs) -> Result<Manifest> {
    let sw = &cfg.sweep;
    match device {
        Device::Tft => {
            let vg = range(sw.tft_vg, args).values()?;
            let vs = args.vs.unwrap_or(sw.tft_vs);
            let biases = match args.vds {
                Some(v) => vec![v],
                None => sw.tft_vds.clone(),
            };
            if biases.is_empty() {
                bail!(CliError::input("no drain-source bias to sweep"));
            }
            let curves: Vec<_> = biases
                .iter()
                .map(|&vds| tft_curve(cfg, &vg, vs, vds).map(|c| (vds, c)))
                .collect::<Result<_>>()?;
            let mut out = RunDir::create(cfg, "iv-sweep")?;
            let mut summary = Vec::new();
            for (vds, c) in curves {
                let file = format!("tft_vds_{vds}.csv");
                out.write_csv(&file, &c)?;
                summary.push(TftCurve {
                    file,
                    vds,
                    vs,
                    max_current: c.iter().map(|p| p.i.abs()).fold(0.0, f64::max),
                });
            }
            out.write_json("tft_sweep.json", &serde_json::json!({ "curves": summary }))?;
            out.finish()
        }
        Device::Rram => {
            let r = range(sw.rram_v, args);
            if !(sw.rram_step_time > 0.0 && sw.rram_step_time.is_finite()) {
                bail!(CliError::input("sweep.rram_step_time must be > 0"));
            }
            let pts = rram_loop(cfg, r, sw.rram_step_time)?;
            let mut out = RunDir::create(cfg, "iv-sweep")?;
            out.write_csv("rram_loop.csv", &pts)?;
            out.write_json(
                "rram_loop.json",
                &serde_json::json!({
                    "points": pts.len(),
                    "step_time": sw.rram_step_time,
                    "enclosed_area": loop_area(&pts).abs(),
                }),
            )?;
            out.finish()
        }
    }
}
