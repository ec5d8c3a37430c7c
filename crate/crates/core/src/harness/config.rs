//! Experiment configuration: a TOML file plus `BQPG_*` environment overrides.
//!
//! An override `BQPG_TRAIN__BATCH_SIZE=512` sets the dotted key
//! `train.batch_size`: the prefix is stripped, the rest lower-cased and `__`
//! separates path segments. Values are parsed as TOML literals and fall back
//! to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::algos::{EstimatorChoice, QSource, TrainConfig};
use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "BQPG_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Gradquality,
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradQualityConfig {
    pub sample_sizes: Vec<usize>,
    pub repeats: usize,
    pub oracle_samples: usize,
    pub estimators: Vec<EstimatorChoice>,
    pub q_source: QSource,
    /// Marginal-likelihood steps on each probe batch before estimating.
    pub kernel_fit_steps: usize,
    /// Policy checkpoint to study; a freshly initialised policy otherwise.
    pub checkpoint: Option<PathBuf>,
}

impl Default for GradQualityConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![512, 2048, 8192],
            repeats: 25,
            oracle_samples: 100_000,
            estimators: vec![EstimatorChoice::Mc, EstimatorChoice::Dbqpg],
            q_source: QSource::Returns,
            kernel_fit_steps: 0,
            checkpoint: None,
        }
    }
}

impl GradQualityConfig {
    pub fn validate(&self) -> Result<()> {
        let max_n = self.sample_sizes.iter().copied().max().unwrap_or(0);
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample_sizes must be non-empty and positive".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.oracle_samples < 10 * max_n {
            return Err(Error::Config(format!(
                "oracle_samples ({}) must be at least 10x the largest probe size ({max_n})",
                self.oracle_samples
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub gradquality: GradQualityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Selftest,
            seed: 0,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            gradquality: GradQualityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text and applies `overrides` (dotted key, raw value).
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_literal(raw))?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, &env_overrides(std::env::vars()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `(dotted key, value)` pairs from `BQPG_*` variables, sorted by key.
pub fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .filter(|rest| !rest.is_empty())
                .map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    out.sort();
    out
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
