//! Download dataset files listed in a manifest and verify their SHA-256.
//!
//! Manifest format (TOML):
//!
//! ```toml
//! [[file]]
//! url = "https://example.org/train-images-idx3-ubyte.gz"
//! sha256 = "<64 hex digits published with the file>"
//! gunzip = true          # optional; store the decompressed file without `.gz`
//! ```
//!
//! `file://` URLs and plain paths are read locally, which allows fetching
//! from a mirror on disk.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::run::{Manifest, RunDir};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchList {
    pub file: Vec<FetchEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchEntry {
    pub url: String,
    pub sha256: String,
    /// Stored file name; the last URL segment when absent.
    pub name: Option<String>,
    #[serde(default)]
    pub gunzip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchRow {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FetchEntry {
    fn download_name(&self) -> Result<String> {
        let n = match &self.name {
            Some(n) => n.clone(),
            None => self.url.rsplit('/').next().unwrap_or_default().to_string(),
        };
        if n.is_empty() || n.contains(['/', '\\']) || n == ".." {
            bail!(CliError::input(format!("cannot derive a file name from `{}`", self.url)));
        }
        Ok(n)
    }

    fn stored_name(&self) -> Result<String> {
        let n = self.download_name()?;
        Ok(match (self.gunzip, n.strip_suffix(".gz")) {
            (true, Some(stem)) => stem.to_string(),
            _ => n,
        })
    }
}

fn get(url: &str) -> Result<Vec<u8>> {
    let local = url.strip_prefix("file://").map(PathBuf::from).or_else(|| {
        (!url.contains("://")).then(|| PathBuf::from(url))
    });
    if let Some(p) = local {
        return std::fs::read(&p).with_context(|| format!("reading {}", p.display()));
    }
    let resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut buf = Vec::new();
    resp.into_reader()
        .read_to_end(&mut buf)
        .with_context(|| format!("reading body of {url}"))?;
    Ok(buf)
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_list(path: &Path) -> Result<FetchList> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let list: FetchList =
        toml::from_str(&text).map_err(|e| CliError::input(format!("fetch manifest {}: {e}", path.display())))?;
    for f in &list.file {
        if f.sha256.len() != 64 || !f.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            bail!(CliError::input(format!("`{}`: sha256 must be 64 hex digits", f.url)));
        }
    }
    Ok(list)
}

/// Fetch every entry into `dest`. A file already present with the expected
/// checksum is kept; a mismatch after download is an error and nothing is
/// written for that entry.
pub fn fetch_all(list: &FetchList, dest: &Path) -> Result<Vec<FetchRow>> {
    std::fs::create_dir_all(dest).with_context(|| format!("creating {}", dest.display()))?;
    let mut rows = Vec::new();
    for f in &list.file {
        let want = f.sha256.to_ascii_lowercase();
        let raw_path = dest.join(f.download_name()?);
        let stored = dest.join(f.stored_name()?);
        let cached = std::fs::read(&raw_path).ok().filter(|b| sha256(b) == want);
        let skipped = cached.is_some() && stored.exists();
        if skipped {
            eprintln!("{} already present", stored.display());
        }
        let bytes = match cached {
            Some(b) => b,
            None => {
                eprintln!("fetching {}", f.url);
                let b = get(&f.url)?;
                let got = sha256(&b);
                if got != want {
                    bail!(CliError::checksum(format!("{}: expected sha256 {want}, got {got}", f.url)));
                }
                std::fs::write(&raw_path, &b).with_context(|| format!("writing {}", raw_path.display()))?;
                b
            }
        };
        if f.gunzip && !skipped {
            let mut out = Vec::new();
            GzDecoder::new(&bytes[..])
                .read_to_end(&mut out)
                .with_context(|| format!("decompressing {}", raw_path.display()))?;
            std::fs::write(&stored, out).with_context(|| format!("writing {}", stored.display()))?;
        }
        rows.push(FetchRow {
            file: f.download_name()?,
            sha256: want,
            bytes: bytes.len() as u64,
        });
    }
    Ok(rows)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let Some(list_path) = &cfg.fetch.manifest else {
        bail!(CliError::config("fetch.manifest is not set"));
    };
    let list = read_list(list_path)?;
    let dest = cfg.fetch.dest.clone().unwrap_or_else(|| cfg.data.path.clone());
    let rows = fetch_all(&list, &dest)?;
    let mut out = RunDir::create(cfg, "fetch")?;
    out.write_csv("fetch.csv", &rows)?;
    out.write_json("fetch.json", &serde_json::json!({ "dest": dest, "files": rows.len() }))?;
    out.finish()
}
