//! Experiment configuration files.
//!
//! A TOML document with the sections `[suite]`, `[model]`, `[train]`,
//! `[hat]` and optionally `[sweep]`; unknown keys anywhere are rejected. One
//! file expands into one [`RunSpec`] per (mode, sweep point), each run once
//! per seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hat_core::data::{SuiteKind, SyntheticSpec};
use hat_core::hat::HatConfig;
use hat_core::nn::ModelSpec;
use hat_core::trainer::{Mode, TrainConfig};

use crate::error::{CliError, Result};
use crate::presets;

pub const DATA_DIR_ENV: &str = "HAT_MNIST_DIR";
const DEFAULT_DATA_DIR: &str = "data/mnist";

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_valid_fraction() -> f64 {
    0.15
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    /// Number of tasks (permuted and synthetic suites).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<usize>,
    /// Base labels of each task (split suites).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    /// Leave the first permuted task unpermuted.
    #[serde(default = "yes")]
    pub identity_first: bool,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    /// Directory with the four MNIST IDX files. Not part of the run identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
}

impl SuiteConfig {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(format!("suite.valid_fraction must lie in (0, 1), got {}", self.valid_fraction));
        }
        match self.kind {
            SuiteKind::Permuted => {
                if self.groups.is_some() || self.synthetic.is_some() {
                    return Err("suite.groups and suite.synthetic do not apply to permuted suites".into());
                }
                match self.tasks {
                    Some(t) if t > 0 => Ok(()),
                    _ => Err("permuted suites need suite.tasks ≥ 1".into()),
                }
            }
            SuiteKind::Split => {
                if self.synthetic.is_some() {
                    return Err("suite.synthetic does not apply to split suites".into());
                }
                let groups = self.groups.as_ref().ok_or("split suites need suite.groups")?;
                if groups.is_empty() || groups.iter().any(|g| g.len() < 2) {
                    return Err("every split group needs at least two labels".into());
                }
                match self.tasks {
                    Some(t) if t != groups.len() => {
                        Err(format!("suite.tasks = {t} but {} groups are listed", groups.len()))
                    }
                    _ => Ok(()),
                }
            }
            SuiteKind::Synthetic => {
                if self.groups.is_some() {
                    return Err("suite.groups does not apply to synthetic suites".into());
                }
                if self.synthetic.is_none() {
                    return Err("synthetic suites need a [suite.synthetic] table".into());
                }
                match self.tasks {
                    Some(t) if t > 0 => Ok(()),
                    _ => Err("synthetic suites need suite.tasks ≥ 1".into()),
                }
            }
        }
    }

    pub fn uses_mnist(&self) -> bool {
        self.kind != SuiteKind::Synthetic
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        let p = self.synthetic.as_ref()?;
        Some(SyntheticSpec {
            tasks: self.tasks.unwrap_or(0),
            classes: p.classes,
            dim: p.dim,
            separation: p.separation,
            train_per_class: p.train_per_class,
            test_per_class: p.test_per_class,
        })
    }

    /// Explicit `data_dir`, else `$HAT_MNIST_DIR`, else `data/mnist`.
    pub fn resolve_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }
}

/// Grid over the two main attention hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub s_max: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Modes to run on the same suite; empty means `train.mode` alone.
    #[serde(default)]
    pub modes: Vec<Mode>,
    pub suite: SuiteConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hat: HatConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

/// Everything that determines the outcome of one run except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub suite: SuiteConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl RunSpec {
    /// Content hash: SHA-256 over the tool version and the canonical JSON
    /// form, truncated to 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("run specs serialize");
        let mut h = Sha256::new();
        h.update(format!("hat-cli {}\n", env!("CARGO_PKG_VERSION")));
        h.update(json);
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn dir_name(&self) -> String {
        let mode = serde_json::to_value(self.train.mode).expect("modes serialize");
        format!("{}-{}", mode.as_str().unwrap_or("run"), self.hash())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run specs serialize to toml")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl ExperimentConfig {
    /// Read and validate a config file. `preset:NAME` names a shipped preset.
    pub fn load(path: &Path) -> Result<Self> {
        let text = match path.to_str().and_then(|p| p.strip_prefix("preset:")) {
            Some(name) => presets::get(name)
                .ok_or_else(|| CliError::Config {
                    path: path.into(),
                    msg: format!("unknown preset; available: {}", presets::names().join(", ")),
                })?
                .to_string(),
            None => std::fs::read_to_string(path).map_err(|e| CliError::Config {
                path: path.into(),
                msg: format!("cannot read config file: {e}"),
            })?,
        };
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.into(),
            msg: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate().map_err(|msg| CliError::Config { path: origin.into(), msg })?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err("seeds must be distinct".into());
        }
        if self.train.hat != HatConfig::default() {
            return Err("attention options belong in [hat], not [train.hat]".into());
        }
        if let Some(s) = &self.sweep {
            if s.s_max.is_empty() || s.c.is_empty() {
                return Err("sweep.s_max and sweep.c must both be non-empty".into());
            }
        }
        self.suite.validate()?;
        self.model.validate().map_err(|e| format!("model: {e}"))?;
        for spec in self.run_specs() {
            spec.train.validate().map_err(|e| format!("train/hat: {e}"))?;
        }
        Ok(())
    }

    /// The runs this file describes, in a stable order.
    pub fn run_specs(&self) -> Vec<RunSpec> {
        let modes = if self.modes.is_empty() { vec![self.train.mode] } else { self.modes.clone() };
        let points: Vec<Option<(f64, f64)>> = match &self.sweep {
            None => vec![None],
            Some(s) => s.s_max.iter().flat_map(|&a| s.c.iter().map(move |&c| Some((a, c)))).collect(),
        };
        let mut suite = self.suite.clone();
        suite.data_dir = None;
        let mut out = Vec::new();
        for &mode in &modes {
            let mut last_plain = None;
            for point in &points {
                let mut train = self.train.clone();
                train.mode = mode;
                if mode == Mode::Hat {
                    train.hat = self.hat.clone();
                    if let Some((s_max, c)) = point {
                        train.hat.s_max = *s_max;
                        train.hat.c = *c;
                    }
                } else {
                    // attention settings do not affect the other modes
                    train.hat = HatConfig::default();
                }
                let spec = RunSpec { suite: suite.clone(), model: self.model.clone(), train };
                if mode != Mode::Hat {
                    if last_plain.as_ref() == Some(&spec) {
                        continue;
                    }
                    last_plain = Some(spec.clone());
                }
                out.push(spec);
            }
        }
        out
    }
}
