//! Plain-text device parameter files.
//!
//! One `name = value` pair per line, SI units, `#` starts a comment that runs
//! to the end of the line. Blank lines are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CimError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, f64>,
    source: Option<PathBuf>,
}

impl ParamSet {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_source(text, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_with_source(&text, Some(path.to_path_buf()))
    }

    fn parse_with_source(text: &str, source: Option<PathBuf>) -> Result<Self> {
        let origin = source.clone().unwrap_or_else(|| PathBuf::from("<memory>"));
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CimError::Format {
                path: origin.clone(),
                reason: format!("line {}: expected `name = value`", lineno + 1),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CimError::Format {
                    path: origin.clone(),
                    reason: format!("line {}: bad key `{key}`", lineno + 1),
                });
            }
            let value: f64 = value.trim().parse().map_err(|_| CimError::Format {
                path: origin.clone(),
                reason: format!("line {}: `{}` is not a number", lineno + 1, value.trim()),
            })?;
            if values.insert(key.to_string(), value).is_some() {
                return Err(CimError::Format {
                    path: origin.clone(),
                    reason: format!("line {}: duplicate key `{key}`", lineno + 1),
                });
            }
        }
        Ok(ParamSet { values, source })
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        self.values
            .get(key)
            .copied()
            .ok_or_else(|| CimError::param(key, "missing from parameter file"))
    }

    pub fn insert(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    /// Fails on keys outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CimError::param(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v:e}");
        }
        out
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }
}
