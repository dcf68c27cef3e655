//! Run directories: resolved config, artifacts, manifest and error record.
//!
//! Each subcommand writes into `<output_dir>/<command>/`. Only the main
//! thread writes there, after the parallel work has finished.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";
pub const ERROR_RECORD: &str = "error.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Written instead of (or after) the manifest when a command fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
    /// Outermost context first.
    pub chain: Vec<String>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
}

impl ErrorRecord {
    pub fn new(command: &str, e: &anyhow::Error, cfg: Option<&ExperimentConfig>) -> Self {
        ErrorRecord {
            command: command.to_string(),
            kind: crate::error_kind(e).to_string(),
            message: e.to_string(),
            chain: e.chain().map(|c| c.to_string()).collect(),
            config_sha256: cfg.map(|c| c.hash()),
            seed: cfg.map(|c| c.seed),
        }
    }
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    config_sha256: String,
    seed: u64,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn dir_for(cfg: &ExperimentConfig, command: &str) -> PathBuf {
        cfg.output_dir.join(command)
    }

    /// Create the directory, clear records of a previous run and write the
    /// resolved config.
    pub fn create(cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        let path = Self::dir_for(cfg, command);
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        for stale in [MANIFEST, ERROR_RECORD] {
            let p = path.join(stale);
            if p.exists() {
                std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        let mut run = RunDir {
            path,
            command: command.to_string(),
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            artifacts: Vec::new(),
        };
        run.write(RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
        Ok(run)
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.file(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(p)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    /// JSON summary with the run's config hash and seed added at the top.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(m) = &mut v {
            let mut stamped = serde_json::Map::new();
            stamped.insert("config_sha256".into(), self.config_sha256.clone().into());
            stamped.insert("seed".into(), self.seed.into());
            stamped.append(m);
            v = serde_json::Value::Object(stamped);
        }
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            artifacts: self.artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        let p = self.path.join(MANIFEST);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(m)
    }
}
