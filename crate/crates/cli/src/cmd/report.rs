//! Collect the headline numbers of finished runs into one long-format CSV.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cim_nn::TrainLog;
use serde::{Deserialize, Serialize};

use crate::cmd::nn::{InferRow, TRAIN_LOG};
use crate::cmd::states::StatesRow;
use crate::config::ExperimentConfig;
use crate::run::{Manifest, RunDir, ERROR_RECORD, MANIFEST};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Summary file of each command whose numeric top-level fields are reported.
const SUMMARIES: [&str; 6] = ["train.json", "infer.json", "prune.json", "mac.json", "rram_loop.json", "states.json"];

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|x| x.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

/// Command directories of a run root, or the directory itself when it holds a manifest.
fn command_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(MANIFEST).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn rows_for(run: &str, dir: &Path) -> Result<Vec<ReportRow>> {
    let m = Manifest::load(&dir.join(MANIFEST))?;
    let mut rows = Vec::new();
    let mut push = |metric: String, value: f64| {
        rows.push(ReportRow {
            run: run.to_string(),
            command: m.command.clone(),
            config_sha256: m.config_sha256.clone(),
            seed: m.seed,
            metric,
            value,
        })
    };
    for name in SUMMARIES {
        let p = dir.join(name);
        if !p.exists() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p)?)
            .with_context(|| format!("parsing {}", p.display()))?;
        for (k, x) in v.as_object().into_iter().flatten() {
            if k == "seed" {
                continue;
            }
            if let Some(f) = x.as_f64() {
                push(k.clone(), f);
            }
        }
    }
    let log = dir.join(TRAIN_LOG);
    if log.exists() {
        let log = TrainLog::from_csv(&std::fs::read_to_string(&log)?)?;
        for r in &log.rows {
            push(format!("{}_accuracy_epoch{}", r.split, r.epoch), r.accuracy);
        }
    }
    let infer = dir.join("infer.csv");
    if infer.exists() {
        for r in read_csv::<InferRow>(&infer)? {
            push(format!("{}_accuracy_sigma{}_seed{}", r.engine, r.sigma, r.variation_seed), r.accuracy);
        }
    }
    let states = dir.join("states.csv");
    if states.exists() {
        for r in read_csv::<StatesRow>(&states)? {
            push(format!("groups_sigma{}", r.sigma), r.groups as f64);
        }
    }
    Ok(rows)
}

pub fn collect(roots: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for root in roots {
        let dirs = command_dirs(root)?;
        if dirs.is_empty() {
            bail!(CliError::input(format!("no finished runs under {}", root.display())));
        }
        for d in dirs {
            if d.join(ERROR_RECORD).exists() {
                eprintln!("skipping failed run {}", d.display());
                continue;
            }
            rows.extend(rows_for(&root.display().to_string(), &d)?);
        }
    }
    Ok(rows)
}

pub fn run(cfg: &ExperimentConfig, roots: &[PathBuf]) -> Result<Manifest> {
    let roots = if roots.is_empty() { vec![cfg.output_dir.clone()] } else { roots.to_vec() };
    let rows = collect(&roots)?;
    let mut out = RunDir::create(cfg, "report")?;
    out.write_csv("report.csv", &rows)?;
    out.finish()
}
