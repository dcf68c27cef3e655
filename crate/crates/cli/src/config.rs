//! Experiment configuration: one TOML file, `--set key=value` overrides and
//! two environment overrides (output directory and thread count).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cim_core::device::{LevelScheme, RramParams, TftParams};
use cim_core::params::ParamSet;
use cim_core::periphery::QuantConfig;
use cim_core::pipeline::ReadMode;
use cim_core::tile::{AccessDevice, DriveConfig, Tile, TileGeometry};
use cim_core::variation::{SeparationCriterion, VariationSpec};
use cim_nn::{DatasetName, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_OUTPUT_DIR: &str = "CIM_OUTPUT_DIR";
pub const ENV_THREADS: &str = "CIM_THREADS";

/// Keys that would shadow the master seed.
const SEED_KEYS: [&str; 2] = ["train.seed", "variation.seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of every subcommand derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: DeviceSection,
    pub tile: TileGeometry,
    pub drive: DriveConfig,
    pub quant: QuantConfig,
    pub variation: VariationSpec,
    pub train: TrainConfig,
    pub data: DataSection,
    pub network: NetworkSection,
    pub infer: InferSection,
    pub prune: PruneSection,
    pub states: StatesSection,
    pub sweep: SweepSection,
    pub mac: MacSection,
    pub fetch: FetchSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            device: DeviceSection::default(),
            tile: TileGeometry::default(),
            drive: DriveConfig::default(),
            quant: QuantConfig::default(),
            variation: VariationSpec::default(),
            train: TrainConfig::default(),
            data: DataSection::default(),
            network: NetworkSection::default(),
            infer: InferSection::default(),
            prune: PruneSection::default(),
            states: StatesSection::default(),
            sweep: SweepSection::default(),
            mac: MacSection::default(),
            fetch: FetchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    /// TFT parameter file; the built-in reference set when absent.
    pub tft_params: Option<PathBuf>,
    pub rram_params: Option<PathBuf>,
    pub level_scheme: LevelScheme,
    pub access: AccessDevice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub name: DatasetName,
    pub path: PathBuf,
    /// Use only the first N training images.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Zero-pad images to `[height, width]` (e.g. 28×28 F-MNIST into a 32×32 network).
    pub pad_to: Option<[usize; 2]>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            name: DatasetName::Fmnist,
            path: PathBuf::from("data/fmnist"),
            train_limit: None,
            test_limit: None,
            pad_to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub preset: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            preset: "vgg-mini".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Weights to evaluate; defaults to the `train` run of this output directory.
    pub checkpoint: Option<PathBuf>,
    pub mode: ReadMode,
    pub calibration_images: usize,
    pub calibration_patches: usize,
    /// One analog run per variation seed; empty means the master seed only.
    pub variation_seeds: Vec<u64>,
    /// Also run a variation-free pass when `variation.sigma_d2d > 0`.
    pub baseline: bool,
    /// Also run the software fixed-point reference.
    pub software_reference: bool,
    /// Upper bound on tiles; `None` means unbounded.
    pub tile_budget: Option<usize>,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            checkpoint: None,
            mode: ReadMode::Ideal,
            calibration_images: 64,
            calibration_patches: 256,
            variation_seeds: Vec::new(),
            baseline: true,
            software_reference: true,
            tile_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub checkpoint: Option<PathBuf>,
    /// Fraction of output channels removed from every convolution.
    pub ratio: f64,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            checkpoint: None,
            ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatesSection {
    pub sigmas: Vec<f64>,
    pub monte_carlo: usize,
    pub criterion: SeparationCriterion,
}

impl Default for StatesSection {
    fn default() -> Self {
        StatesSection {
            sigmas: vec![0.0, 0.02, 0.05, 0.1, 0.2],
            monte_carlo: 10_000,
            criterion: SeparationCriterion::default(),
        }
    }
}

/// Inclusive voltage range sampled at `points` evenly spaced values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Range {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            bail!(crate::CliError::input("sweep bounds must be finite"));
        }
        if self.start > self.stop {
            bail!(crate::CliError::input(format!(
                "sweep start {} is above stop {}",
                self.start, self.stop
            )));
        }
        if self.points == 0 {
            bail!(crate::CliError::input("sweep needs at least one point"));
        }
        if self.start == self.stop || self.points == 1 {
            return Ok(vec![self.start]);
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| if k + 1 == self.points { self.stop } else { self.start + step * k as f64 })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Gate sweep of the TFT transfer curves.
    pub tft_vg: Range,
    /// One transfer curve per drain-source bias.
    pub tft_vds: Vec<f64>,
    pub tft_vs: f64,
    /// RRAM loop 0 → stop → start → 0; `start ≤ 0 ≤ stop`.
    pub rram_v: Range,
    /// Time spent at each voltage step of the loop (s).
    pub rram_step_time: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            tft_vg: Range {
                start: -1.0,
                stop: 3.0,
                points: 81,
            },
            tft_vds: vec![0.1, 1.0],
            tft_vs: 0.0,
            rram_v: Range {
                start: -1.5,
                stop: 1.5,
                points: 61,
            },
            rram_step_time: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MacSection {
    /// CSV `row,col,layer,level`; unlisted cells stay in the HRS.
    pub weights: Option<PathBuf>,
    /// TOML stimulus file; every row on and every layer selected when absent.
    pub stimulus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FetchSection {
    /// TOML list of `[[file]]` entries with `url` and `sha256`.
    pub manifest: Option<PathBuf>,
    /// Download directory; `data.path` when absent.
    pub dest: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parse `text`, apply `key=value` overrides and the output-directory
    /// environment override.
    pub fn resolve(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| crate::CliError::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        for key in SEED_KEYS {
            if lookup(&table, key).is_some() {
                bail!(crate::CliError::config(format!(
                    "`{key}` is derived from the master `seed`; set `seed` instead"
                )));
            }
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| crate::CliError::config(e.to_string()))?;
        if let Some(dir) = std::env::var_os(ENV_OUTPUT_DIR) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.train.seed = cfg.seed;
        cfg.variation.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::resolve(&text, overrides)
    }

    fn validate(&self) -> Result<()> {
        self.tile.validate()?;
        self.quant.validate()?;
        self.variation.validate()?;
        self.train.validate()?;
        if self.output_dir.as_os_str().is_empty() {
            bail!(crate::CliError::config("output_dir is empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config with `output_dir` blanked, so the same
    /// experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn tft(&self) -> Result<TftParams> {
        Ok(match &self.device.tft_params {
            Some(p) => TftParams::from_param_set(&ParamSet::load(p)?)?,
            None => TftParams::reference(),
        })
    }

    pub fn rram(&self) -> Result<RramParams> {
        Ok(match &self.device.rram_params {
            Some(p) => RramParams::from_param_set(&ParamSet::load(p)?)?,
            None => RramParams::reference(),
        })
    }

    /// Blank tile with the configured geometry, devices and drive.
    pub fn tile(&self) -> Result<Tile> {
        Ok(Tile::new(self.tile, self.tft()?, self.rram()?)?
            .with_drive(self.drive)
            .with_access(self.device.access))
    }
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| crate::CliError::config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(crate::CliError::config(format!("bad override key `{key}`")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| crate::CliError::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
