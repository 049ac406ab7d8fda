//! `hat run`: train every (spec, seed) of a config into a content-addressed
//! directory tree.
//!
//! ```text
//! <output>/<mode>-<hash>/config.toml
//! <output>/<mode>-<hash>/seed-<N>/log.jsonl
//!                                 checkpoints/task-<t>.ckpt
//!                                 accuracy.tsv
//!                                 capacity.tsv      (hat only)
//!                                 reuse.tsv         (hat only)
//!                                 report.json       (written last)
//! ```
//!
//! A seed directory holding `report.json` is complete and is skipped on the
//! next invocation unless `--force` is given. A failed run leaves its partial
//! artifacts plus `error.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use hat_core::checkpoint::Checkpoint;
use hat_core::data::{load_mnist, make_permuted_suite, make_split_suite, make_synthetic_suite, Dataset, SuiteKind, TaskSuite};
use hat_core::hat::HatState;
use hat_core::monitor::reuse_matrix;
use hat_core::nn::Network;
use hat_core::trainer::{run_sequence, EpochRecord, Mode, Observer, RunReport, TaskRunRecord};

use crate::config::{ExperimentConfig, RunSpec, SuiteConfig};
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.jsonl";
pub const ERROR_FILE: &str = "error.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub hash: String,
    pub spec: RunSpec,
    pub report: RunReport,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Core(hat_core::Error::Format(format!("{}: {e}", path.display()))))
    }
}

pub fn checkpoint_path(seed_dir: &Path, task: usize) -> PathBuf {
    seed_dir.join(CHECKPOINT_DIR).join(format!("task-{}.ckpt", task + 1))
}

/// MNIST loaded at most once per directory.
#[derive(Default)]
pub struct DataStore {
    mnist: BTreeMap<PathBuf, (Arc<Dataset>, Arc<Dataset>)>,
}

impl DataStore {
    pub fn mnist(&mut self, dir: &Path) -> Result<(Arc<Dataset>, Arc<Dataset>)> {
        if let Some(d) = self.mnist.get(dir) {
            return Ok(d.clone());
        }
        let (train, test) = load_mnist(dir).map_err(|e| match e {
            hat_core::Error::Io(source) => CliError::Io {
                context: format!("loading MNIST from {} (see `hat fetch-data`)", dir.display()),
                source,
            },
            other => other.into(),
        })?;
        let pair = (Arc::new(train), Arc::new(test));
        self.mnist.insert(dir.to_path_buf(), pair.clone());
        Ok(pair)
    }

    /// The task suite of `suite` for one seed.
    pub fn suite(&mut self, suite: &SuiteConfig, data_dir: &Path, seed: u64) -> Result<TaskSuite> {
        let frac = suite.valid_fraction;
        Ok(match suite.kind {
            SuiteKind::Permuted => {
                let (train, test) = self.mnist(data_dir)?;
                make_permuted_suite(&train, &test, suite.tasks.unwrap_or(1), seed, suite.identity_first, frac)?
            }
            SuiteKind::Split => {
                let (train, test) = self.mnist(data_dir)?;
                make_split_suite(&train, &test, suite.groups.as_deref().unwrap_or_default(), seed, frac)?
            }
            SuiteKind::Synthetic => {
                let spec = suite.synthetic_spec().expect("validated synthetic suite");
                make_synthetic_suite(&spec, seed, frac)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedOutcome {
    Trained,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub spec: RunSpec,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: SeedOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the config's seed list when non-empty.
    pub seeds: Vec<u64>,
    pub force: bool,
    /// One progress line per epoch on stderr instead of one per task.
    pub verbose: bool,
}

/// Run every spec and seed of `cfg`. Stops at the first failure.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions, data: &mut DataStore) -> Result<Vec<SeedRun>> {
    let seeds = if opts.seeds.is_empty() { cfg.seeds.clone() } else { opts.seeds.clone() };
    let data_dir = cfg.suite.resolve_data_dir();
    let mut done = Vec::new();
    for spec in cfg.run_specs() {
        for &seed in &seeds {
            done.push(run_seed(&spec, seed, &cfg.output, &data_dir, opts, data)?);
        }
    }
    Ok(done)
}

/// Train one (spec, seed) under `output` unless it is already complete.
pub fn run_seed(
    spec: &RunSpec,
    seed: u64,
    output: &Path,
    data_dir: &Path,
    opts: &RunOptions,
    data: &mut DataStore,
) -> Result<SeedRun> {
    let spec_dir = output.join(spec.dir_name());
    let seed_dir = spec_dir.join(format!("seed-{seed}"));
    let label = format!("{}/seed-{seed}", spec.dir_name());
    let mut result = SeedRun { spec: spec.clone(), seed, dir: seed_dir.clone(), outcome: SeedOutcome::Skipped };
    if seed_dir.join(REPORT_FILE).is_file() && !opts.force {
        eprintln!("[{label}] complete, skipping");
        return Ok(result);
    }
    if seed_dir.exists() {
        fs::remove_dir_all(&seed_dir).map_err(CliError::io(format!("clearing {}", seed_dir.display())))?;
    }
    fs::create_dir_all(seed_dir.join(CHECKPOINT_DIR)).map_err(CliError::io(format!("creating {}", seed_dir.display())))?;
    write_atomic(&spec_dir.join(CONFIG_FILE), spec.to_toml().as_bytes())?;

    match train_seed(spec, seed, &seed_dir, data_dir, &label, opts.verbose, data) {
        Ok(()) => {
            result.outcome = SeedOutcome::Trained;
            Ok(result)
        }
        Err(e) => {
            // best effort: the original error matters more than this one
            let _ = fs::write(seed_dir.join(ERROR_FILE), format!("{e}\n"));
            Err(e)
        }
    }
}

fn train_seed(
    spec: &RunSpec,
    seed: u64,
    seed_dir: &Path,
    data_dir: &Path,
    label: &str,
    verbose: bool,
    data: &mut DataStore,
) -> Result<()> {
    let suite = data.suite(&spec.suite, data_dir, seed)?;
    let log_path = seed_dir.join(LOG_FILE);
    let log = File::create(&log_path).map_err(CliError::io(format!("creating {}", log_path.display())))?;
    let mut obs = RunObserver {
        log: BufWriter::new(log),
        log_error: None,
        seed_dir: seed_dir.to_path_buf(),
        meta: checkpoint_meta(spec, seed),
        label: label.to_string(),
        verbose,
        started: Instant::now(),
    };
    obs.line(&serde_json::json!({"event": "start", "hash": spec.hash(), "seed": seed, "suite": suite.manifest()}));
    let outcome = run_sequence(&suite, &spec.model, &spec.train, seed, &mut obs);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            obs.line(&serde_json::json!({"event": "error", "message": e.to_string()}));
            obs.finish()?;
            return Err(e.into());
        }
    };
    obs.line(&serde_json::json!({"event": "end", "accuracy": outcome.report.accuracy.rows()}));
    obs.finish()?;

    write_atomic(&seed_dir.join("accuracy.tsv"), accuracy_tsv(&outcome.report).as_bytes())?;
    if let Some(hat) = &outcome.hat {
        write_atomic(&seed_dir.join("capacity.tsv"), capacity_tsv(&outcome.report.tasks).as_bytes())?;
        write_atomic(&seed_dir.join("reuse.tsv"), reuse_tsv(hat, suite.dim())?.as_bytes())?;
    }
    let file = RunFile { hash: spec.hash(), spec: spec.clone(), report: outcome.report };
    let json = serde_json::to_string_pretty(&file).expect("reports serialize");
    write_atomic(&seed_dir.join(REPORT_FILE), json.as_bytes())?;
    eprintln!("[{label}] done in {:.0}s", obs.started.elapsed().as_secs_f64());
    Ok(())
}

pub fn checkpoint_meta(spec: &RunSpec, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("spec".to_string(), serde_json::to_string(spec).expect("run specs serialize")),
        ("seed".to_string(), seed.to_string()),
        ("hash".to_string(), spec.hash()),
    ])
}

/// Write through a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(CliError::io(format!("renaming to {}", path.display())))
}

struct RunObserver {
    log: BufWriter<File>,
    log_error: Option<std::io::Error>,
    seed_dir: PathBuf,
    meta: BTreeMap<String, String>,
    label: String,
    verbose: bool,
    started: Instant,
}

impl RunObserver {
    fn line(&mut self, value: &serde_json::Value) {
        if self.log_error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.log, value)
            .map_err(std::io::Error::from)
            .and_then(|_| self.log.write_all(b"\n"));
        if let Err(e) = res {
            self.log_error = Some(e);
        }
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(e) = self.log_error.take() {
            return Err(CliError::Io { context: "writing the run log".into(), source: e });
        }
        self.log.flush().map_err(CliError::io("flushing the run log"))
    }
}

impl Observer for RunObserver {
    fn epoch(&mut self, r: &EpochRecord) {
        let mut v = serde_json::to_value(r).expect("epoch records serialize");
        v["event"] = "epoch".into();
        self.line(&v);
        if self.verbose {
            eprintln!(
                "[{}] task {} epoch {} lr {:.2e} train {:.4} valid {:.4}{}",
                self.label,
                r.task + 1,
                r.epoch,
                r.lr,
                r.train_loss,
                r.valid_loss,
                r.capacity.map(|c| format!(" capacity {c:.3}")).unwrap_or_default()
            );
        }
    }

    fn task_done(&mut self, t: usize, net: &Network, hat: Option<&HatState>, record: &TaskRunRecord) -> hat_core::Result<()> {
        let mut v = serde_json::to_value(record).expect("task records serialize");
        v["event"] = "task_done".into();
        self.line(&v);
        let ckpt = Checkpoint { net: net.clone(), hat: hat.cloned(), tasks_trained: t + 1, meta: self.meta.clone() };
        ckpt.save(&checkpoint_path(&self.seed_dir, t))?;
        eprintln!(
            "[{}] task {} finished after {} epochs, test accuracy {:.4} ({:.0}s)",
            self.label,
            t + 1,
            record.epochs,
            record.test_accuracy,
            self.started.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

/// `t  tau  accuracy`, 1-based task numbers.
pub fn accuracy_tsv(report: &RunReport) -> String {
    let mut out = String::from("t\ttau\taccuracy\n");
    for (t, row) in report.accuracy.rows().iter().enumerate() {
        for (tau, a) in row.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{a:.6}", t + 1, tau + 1);
        }
    }
    out
}

/// Capacity series: one row per sample, per-layer usage in trailing columns.
pub fn capacity_tsv(tasks: &[TaskRunRecord]) -> String {
    let layers = tasks.iter().flat_map(|t| &t.capacity).map(|c| c.layers.len()).max().unwrap_or(0);
    let mut out = String::from("update\ttask\tepoch\tcapacity");
    for l in 1..=layers {
        let _ = write!(out, "\tlayer_{l}");
    }
    out.push('\n');
    for (i, c) in tasks.iter().flat_map(|t| &t.capacity).enumerate() {
        let _ = write!(out, "{}\t{}\t{}\t{:.6}", i + 1, c.task + 1, c.epoch, c.capacity);
        for u in &c.layers {
            let _ = write!(out, "\t{u:.6}");
        }
        out.push('\n');
    }
    out
}

fn reuse_tsv(hat: &HatState, input_dim: usize) -> Result<String> {
    let m = reuse_matrix(hat, input_dim)?;
    let mut out = String::from("task_i\ttask_j\treuse\n");
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(out, "{}\t{}\t{v:.6}", i + 1, j + 1);
            }
        }
    }
    Ok(out)
}

/// Mode name as written in configs and directory names.
pub fn mode_name(mode: Mode) -> String {
    serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}
