//! Distinguishable-state counts over a grid of device-to-device spreads.

use anyhow::{bail, Result};
use cim_core::variation::{distinguishable_states_report, VariationSpec};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{Manifest, RunDir};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesRow {
    pub sigma: f64,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub sigma: f64,
    pub level: usize,
    pub mean_current: f64,
    pub std_current: f64,
    pub group: usize,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let st = &cfg.states;
    if st.sigmas.is_empty() {
        bail!(CliError::input("states.sigmas is empty"));
    }
    let rram = cfg.rram()?;
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for &sigma in &st.sigmas {
        let spec = VariationSpec {
            sigma_d2d: sigma,
            ..cfg.variation
        };
        let rep = distinguishable_states_report(
            &rram,
            cfg.device.level_scheme,
            &spec,
            cfg.drive.v_read,
            st.monte_carlo,
            &st.criterion,
        )?;
        eprintln!("sigma {sigma}: {} groups", rep.n_groups);
        rows.push(StatesRow {
            sigma,
            groups: rep.n_groups,
        });
        levels.extend(rep.levels.iter().map(|l| LevelRow {
            sigma,
            level: l.level,
            mean_current: l.mean_current,
            std_current: l.std_current,
            group: l.group_id,
        }));
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    let monotone = sorted.windows(2).all(|w| w[1].groups <= w[0].groups);

    let mut out = RunDir::create(cfg, "states")?;
    out.write_csv("states.csv", &rows)?;
    out.write_csv("states_levels.csv", &levels)?;
    out.write_json(
        "states.json",
        &serde_json::json!({
            "levels": rram.n_levels,
            "monte_carlo": st.monte_carlo,
            "k_sigma": st.criterion.k_sigma,
            "v_read": cfg.drive.v_read,
            "groups": rows,
            "non_increasing_in_sigma": monotone,
        }),
    )?;
    out.finish()
}
