//! Training, inference and pruning runs.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cim_core::variation::VariationSpec;
use cim_nn::checkpoint::Checkpoint;
use cim_nn::train::LogRow;
use cim_nn::{
    build_network, infer, infer_software, load_dataset, map_network, prune_channels, Dataset, InferConfig,
    InferenceReport, NetworkSpec, NnError, QuantizedNetwork, Shape, Splits,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{Manifest, RunDir};
use crate::CliError;

pub const CHECKPOINT: &str = "weights.cimw";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Dataset splits after the configured limits and padding.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let s = load_dataset(d.name, &d.path).with_context(|| format!("loading {:?} from {}", d.name, d.path.display()))?;
    let prep = |set: Dataset, limit: Option<usize>| -> Result<Dataset> {
        let set = match limit {
            Some(n) => set.take(n),
            None => set,
        };
        Ok(match d.pad_to {
            Some([h, w]) => set.padded(h, w)?,
            None => set,
        })
    };
    Ok(Splits {
        train: prep(s.train, d.train_limit)?,
        test: prep(s.test, d.test_limit)?,
    })
}

fn shape(d: &Dataset) -> Shape {
    Shape::new(d.height, d.width, d.channels)
}

pub fn network(cfg: &ExperimentConfig, input: Shape) -> Result<NetworkSpec> {
    Ok(build_network(&cfg.network.preset, Some(input))?)
}

/// Explicit checkpoint, else the `train` run of this output directory.
pub fn checkpoint_path(cfg: &ExperimentConfig, explicit: Option<&PathBuf>) -> Result<PathBuf> {
    let p = explicit
        .cloned()
        .unwrap_or_else(|| RunDir::dir_for(cfg, "train").join(CHECKPOINT));
    if !p.exists() {
        bail!(CliError::state(format!(
            "no checkpoint at {}: run `train` first or set the checkpoint path",
            p.display()
        )));
    }
    Ok(p)
}

fn stamp(ck: &mut Checkpoint, out: &RunDir, cfg: &ExperimentConfig) {
    ck.meta.insert("config_sha256".into(), out.config_sha256().to_string());
    ck.meta.insert("seed".into(), out.seed().to_string());
    ck.meta.insert("dataset".into(), format!("{:?}", cfg.data.name).to_lowercase());
}

#[derive(Serialize)]
struct TrainSummary {
    preset: String,
    train_images: usize,
    test_images: usize,
    epochs: usize,
    /// Running accuracy over the last epoch, dropout active.
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    /// Whole training set in inference mode after the last epoch.
    train_eval_accuracy: Option<f64>,
    gap: Option<f64>,
    gap_eval: Option<f64>,
}

pub fn train(cfg: &ExperimentConfig) -> Result<Manifest> {
    let d = load_data(cfg)?;
    let spec = network(cfg, shape(&d.train))?;
    let mut out = RunDir::create(cfg, "train")?;
    let started = Instant::now();
    let outcome = cim_nn::train(&spec, &d.train, Some(&d.test), &cfg.train, &cfg.quant, &cfg.tile, |r: &LogRow| {
        eprintln!("epoch {} {}: accuracy {:.4} loss {:.4}", r.epoch, r.split, r.accuracy, r.loss);
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(NnError::Diverged { epoch, step, loss, log }) => {
            out.write(TRAIN_LOG, log.to_csv().as_bytes())?;
            return Err(NnError::Diverged { epoch, step, loss, log }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let seconds = started.elapsed().as_secs_f64();
    let log = &outcome.log;
    let acc = |split: &str| log.last(split).map(|r| r.accuracy);
    let (tr, te, te_eval) = (acc("train"), acc("test"), acc("train-eval"));
    let mut ck = Checkpoint::new(spec.clone(), outcome.weights.clone())?;
    stamp(&mut ck, &out, cfg);
    out.write(CHECKPOINT, &ck.to_bytes())?;
    out.write(TRAIN_LOG, log.to_csv().as_bytes())?;
    out.write_json(
        "train.json",
        &TrainSummary {
            preset: spec.name.clone(),
            train_images: d.train.len(),
            test_images: d.test.len(),
            epochs: cfg.train.epochs,
            train_accuracy: tr,
            test_accuracy: te,
            train_eval_accuracy: te_eval,
            gap: tr.zip(te).map(|(a, b)| a - b),
            gap_eval: te_eval.zip(te).map(|(a, b)| a - b),
        },
    )?;
    // Wall time is the only non-reproducible output, so it has its own file.
    out.write_json(
        "timing.json",
        &serde_json::json!({ "train_seconds": seconds, "threads": rayon::current_num_threads() }),
    )?;
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRow {
    pub engine: String,
    pub sigma: f64,
    pub variation_seed: u64,
    pub n_images: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub run: usize,
    pub layer: usize,
    pub tiles: usize,
    pub lsb_units: u32,
    pub full_scale: f64,
    pub quantile_current: f64,
    pub saturations: u64,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn check_shape(spec: &NetworkSpec, d: &Dataset) -> Result<()> {
    if spec.input != shape(d) {
        bail!(CliError::input(format!(
            "checkpoint expects {}×{}×{} inputs, data is {}×{}×{} (see data.pad_to)",
            spec.input.height, spec.input.width, spec.input.channels, d.height, d.width, d.channels
        )));
    }
    Ok(())
}

pub fn infer_cmd(cfg: &ExperimentConfig) -> Result<Manifest> {
    let path = checkpoint_path(cfg, cfg.infer.checkpoint.as_ref())?;
    let ck = Checkpoint::load(&path)?;
    let d = load_data(cfg)?;
    check_shape(&ck.spec, &d.test)?;
    let ic = &cfg.infer;
    let net = QuantizedNetwork::new(&ck.spec, &ck.weights, &cfg.quant)?;
    let mapped = map_network(net, cfg.tile()?, cfg.device.level_scheme, ic.tile_budget)?;
    eprintln!("{} tiles for {} weighted layers", mapped.total_tiles(), mapped.layers.len());

    let mut rows = Vec::new();
    let mut reports: Vec<(String, InferenceReport)> = Vec::new();
    if ic.software_reference {
        let r = infer_software(&mapped.net, &d.test)?;
        eprintln!("software: accuracy {:.4}", r.accuracy);
        rows.push(InferRow {
            engine: "software".into(),
            sigma: 0.0,
            variation_seed: 0,
            n_images: r.n_images,
            correct: r.correct,
            accuracy: r.accuracy,
            saturations: 0,
        });
        reports.push(("confusion_software.csv".into(), r));
    }
    let sigma = cfg.variation.sigma_d2d;
    let seeds = if ic.variation_seeds.is_empty() {
        vec![cfg.seed]
    } else {
        ic.variation_seeds.clone()
    };
    let mut runs: Vec<(f64, u64)> = Vec::new();
    if sigma == 0.0 {
        runs.push((0.0, cfg.seed));
    } else {
        if ic.baseline {
            runs.push((0.0, cfg.seed));
        }
        runs.extend(seeds.iter().map(|&s| (sigma, s)));
    }
    let mut layers = Vec::new();
    for (sigma, seed) in runs {
        let icfg = InferConfig {
            mode: ic.mode,
            variation: VariationSpec {
                sigma_d2d: sigma,
                seed,
                ..cfg.variation
            },
            calibration_images: ic.calibration_images,
            calibration_patches: ic.calibration_patches,
            seed: cfg.seed,
        };
        let r = infer(&mapped, &d.test, &d.train, &icfg)?;
        eprintln!(
            "analog sigma {sigma} seed {seed}: accuracy {:.4}, {} saturations",
            r.accuracy, r.saturations
        );
        let run = rows.len();
        layers.extend(r.layers.iter().map(|l| LayerRow {
            run,
            layer: l.layer,
            tiles: l.tiles,
            lsb_units: l.lsb_units,
            full_scale: l.full_scale,
            quantile_current: l.quantile_current,
            saturations: l.saturations,
        }));
        rows.push(InferRow {
            engine: "analog".into(),
            sigma,
            variation_seed: seed,
            n_images: r.n_images,
            correct: r.correct,
            accuracy: r.accuracy,
            saturations: r.saturations,
        });
        reports.push((format!("confusion_sigma{sigma}_seed{seed}.csv"), r));
    }

    let analog = |pred: &dyn Fn(&InferRow) -> bool| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.engine == "analog" && pred(r))
            .map(|r| r.accuracy)
            .collect()
    };
    let baseline = analog(&|r| r.sigma == 0.0).first().copied();
    let median_varied = if sigma > 0.0 { median(&mut analog(&|r| r.sigma > 0.0)) } else { None };
    let software = rows.iter().find(|r| r.engine == "software").map(|r| r.accuracy);

    let mut out = RunDir::create(cfg, "infer")?;
    out.write_csv("infer.csv", &rows)?;
    out.write_csv("infer_layers.csv", &layers)?;
    for (name, r) in &reports {
        out.write(name, r.confusion_csv().as_bytes())?;
    }
    out.write_json(
        "infer.json",
        &serde_json::json!({
            "checkpoint": path,
            "total_tiles": mapped.total_tiles(),
            "software_accuracy": software,
            "baseline_accuracy": baseline,
            "sigma": sigma,
            "variation_seeds": if sigma > 0.0 { seeds } else { Vec::new() },
            "median_accuracy": median_varied,
            "degradation": baseline.zip(median_varied).map(|(b, m)| b - m),
            "runs": rows,
        }),
    )?;
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub layer: usize,
    pub original: usize,
    pub kept: usize,
}

pub fn prune(cfg: &ExperimentConfig) -> Result<Manifest> {
    let path = checkpoint_path(cfg, cfg.prune.checkpoint.as_ref())?;
    let ck = Checkpoint::load(&path)?;
    let d = load_data(cfg)?;
    check_shape(&ck.spec, &d.test)?;
    let p = prune_channels(&ck.spec, &ck.weights, cfg.prune.ratio)?;
    let tile = cfg.tile()?;
    let before = QuantizedNetwork::new(&ck.spec, &ck.weights, &cfg.quant)?;
    let after = QuantizedNetwork::new(&p.spec, &p.weights, &cfg.quant)?;
    let acc_before = infer_software(&before, &d.test)?.accuracy;
    let acc_after = infer_software(&after, &d.test)?.accuracy;
    let tiles_before = map_network(before, tile.clone(), cfg.device.level_scheme, None)?.total_tiles();
    let tiles_after = map_network(after, tile, cfg.device.level_scheme, None)?.total_tiles();
    eprintln!("pruned: accuracy {acc_before:.4} -> {acc_after:.4}, tiles {tiles_before} -> {tiles_after}");

    let rows: Vec<PruneRow> = p
        .kept
        .iter()
        .enumerate()
        .zip(&ck.weights.layers)
        .map(|((layer, k), l)| PruneRow {
            layer,
            original: l.out,
            kept: k.as_ref().map_or(l.out, Vec::len),
        })
        .collect();
    let mut out = RunDir::create(cfg, "prune")?;
    let mut pk = Checkpoint::new(p.spec.clone(), p.weights.clone())?;
    stamp(&mut pk, &out, cfg);
    pk.meta.insert("pruned_from".into(), path.display().to_string());
    out.write(CHECKPOINT, &pk.to_bytes())?;
    out.write_csv("prune.csv", &rows)?;
    out.write_json(
        "prune.json",
        &serde_json::json!({
            "checkpoint": path,
            "ratio": cfg.prune.ratio,
            "software_accuracy_before": acc_before,
            "software_accuracy_after": acc_after,
            "tiles_before": tiles_before,
            "tiles_after": tiles_after,
        }),
    )?;
    out.finish()
}
