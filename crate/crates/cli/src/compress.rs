//! `hat compress`: retrain one task of a finished run with a strong sparsity
//! push and positive embedding initialization, then prune it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hat_core::checkpoint::Checkpoint;
use hat_core::data::TaskView;
use hat_core::hat::{binarize_units, HatState};
use hat_core::monitor::{prune, PrunedNetwork};
use hat_core::nn::{argmax, InitScheme, Network, UnitGates};
use hat_core::rng::{stream, Stream};
use hat_core::trainer::{evaluate, train_task, Gating, Mode, Observer};
use hat_core::Tensor;

use crate::config::RunSpec;
use crate::error::{CliError, Result};
use crate::run::{write_atomic, DataStore};

pub const STATS_FILE: &str = "stats.json";
pub const PRUNED_FILE: &str = "pruned.ckpt";

#[derive(Debug, Clone)]
pub struct CompressOptions {
    pub ckpt: PathBuf,
    /// 1-based task number.
    pub task: usize,
    pub c: f64,
    pub threshold: f64,
    pub init: InitScheme,
    pub max_epochs: Option<usize>,
    pub data_dir: Option<PathBuf>,
    /// Defaults to `compress/` next to the checkpoint directory.
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl CompressOptions {
    pub fn new(ckpt: PathBuf, task: usize) -> Self {
        Self {
            ckpt,
            task,
            c: 1.5,
            threshold: 0.5,
            init: InitScheme::Uniform { low: 0.0, high: 2.0 },
            max_epochs: None,
            data_dir: None,
            out: None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressStats {
    /// 1-based.
    pub task: usize,
    pub c: f64,
    pub threshold: f64,
    /// Kept body weights over all body weights.
    pub compression: f64,
    pub kept: usize,
    pub total: usize,
    /// The checkpoint's own accuracy on the task, as trained.
    pub reference_accuracy: f64,
    /// Compression-trained network under soft attention at `s_max`.
    pub soft_accuracy: f64,
    /// Same network, attention binarized at `threshold`: before pruning.
    pub masked_accuracy: f64,
    /// After pruning.
    pub pruned_accuracy: f64,
    pub epochs: usize,
}

pub const STATS_HEADER: &str =
    "task\tc\tthreshold\tcompression\tkept\ttotal\treference_acc\tsoft_acc\tmasked_acc\tpruned_acc";

impl CompressStats {
    pub fn tsv(&self) -> String {
        let mut out = format!("{STATS_HEADER}\n");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.task,
            self.c,
            self.threshold,
            self.compression,
            self.kept,
            self.total,
            self.reference_accuracy,
            self.soft_accuracy,
            self.masked_accuracy,
            self.pruned_accuracy
        );
        out
    }
}

/// Run spec and seed recorded in a checkpoint written by `hat run`.
pub fn checkpoint_origin(ckpt: &Checkpoint, path: &Path) -> Result<(RunSpec, u64)> {
    let missing = || CliError::Usage(format!("{} carries no run metadata; was it written by `hat run`?", path.display()));
    let spec = ckpt.meta.get("spec").ok_or_else(missing)?;
    let seed = ckpt.meta.get("seed").ok_or_else(missing)?;
    let spec = RunSpec::from_json(spec).map_err(|e| CliError::Usage(format!("{}: bad run metadata: {e}", path.display())))?;
    let seed = seed.parse().map_err(|_| CliError::Usage(format!("{}: bad seed metadata", path.display())))?;
    Ok((spec, seed))
}

fn output_dir(opts: &CompressOptions) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    let ckpt_dir = opts.ckpt.parent().unwrap_or(Path::new("."));
    let seed_dir = ckpt_dir.parent().unwrap_or(ckpt_dir);
    seed_dir.join("compress").join(format!("task-{}-c{}-thr{}", opts.task, opts.c, opts.threshold))
}

fn pruned_accuracy(p: &PrunedNetwork, view: &TaskView) -> Result<f64> {
    let all: Vec<usize> = (0..view.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(2000) {
        let (x, y): (Tensor, Vec<usize>) = view.gather(chunk)?;
        let logits = p.logits(&x)?;
        correct += (0..y.len()).filter(|&i| argmax(logits.row(i)) == y[i]).count();
    }
    Ok(correct as f64 / view.len() as f64)
}

/// Train, prune and evaluate; results are cached in the output directory.
pub fn cmd_compress(opts: &CompressOptions, data: &mut DataStore, observer: &mut dyn Observer) -> Result<CompressStats> {
    if !(opts.c >= 0.0 && opts.c.is_finite()) {
        return Err(CliError::Usage(format!("--c must be finite and ≥ 0, got {}", opts.c)));
    }
    if !(0.0..1.0).contains(&opts.threshold) {
        return Err(CliError::Usage(format!("--threshold must lie in [0, 1), got {}", opts.threshold)));
    }
    let out = output_dir(opts);
    let stats_path = out.join(STATS_FILE);
    if stats_path.is_file() && !opts.force {
        let text = std::fs::read_to_string(&stats_path).map_err(CliError::io(format!("reading {}", stats_path.display())))?;
        if let Ok(stats) = serde_json::from_str(&text) {
            eprintln!("[compress] reusing {}", stats_path.display());
            return Ok(stats);
        }
    }

    let ckpt = Checkpoint::load(&opts.ckpt)?;
    let (spec, seed) = checkpoint_origin(&ckpt, &opts.ckpt)?;
    if opts.task == 0 || opts.task > ckpt.tasks_trained {
        return Err(CliError::Usage(format!(
            "unknown task {}: the checkpoint holds tasks 1..={}",
            opts.task, ckpt.tasks_trained
        )));
    }
    let t = opts.task - 1;
    let data_dir = opts.data_dir.clone().unwrap_or_else(|| spec.suite.resolve_data_dir());
    let suite = data.suite(&spec.suite, &data_dir, seed)?;
    let task = &suite.tasks[t];
    let reference_accuracy = evaluate(&ckpt.net, Gating::for_mode(spec.train.mode, ckpt.hat.as_ref()), t, &task.test)?;

    let mut cfg = spec.train.clone();
    cfg.mode = Mode::Hat;
    cfg.hat.c = opts.c;
    cfg.hat.embedding_init = opts.init;
    if let Some(e) = opts.max_epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    let mut net = Network::new(suite.dim(), &spec.model, &[task.classes()], &mut stream(seed, Stream::Init, 0))?;
    let mut hat = HatState::new(cfg.hat.clone(), suite.dim(), &spec.model.hidden)?;
    let record = train_task(&mut net, Some(&mut hat), task, 0, &cfg, seed, observer)?;

    let soft_accuracy = evaluate(&net, Gating::Hat { state: &hat, strict: false }, 0, &task.test)?;
    let mask = binarize_units(&hat.attention(0, hat.config().s_max)?.units, opts.threshold);
    let gates = UnitGates { input: mask.input.as_deref(), layers: &mask.layers };
    let mut correct = 0usize;
    let all: Vec<usize> = (0..task.test.len()).collect();
    for chunk in all.chunks(2000) {
        let (x, y) = task.test.gather(chunk)?;
        let logits = net.logits(&x, 0, Some(gates))?;
        correct += (0..y.len()).filter(|&i| argmax(logits.row(i)) == y[i]).count();
    }
    let masked_accuracy = correct as f64 / task.test.len() as f64;
    let pruned = prune(&net, &hat, 0, opts.threshold)?;
    let stats = CompressStats {
        task: opts.task,
        c: opts.c,
        threshold: opts.threshold,
        compression: pruned.compression(),
        kept: pruned.kept,
        total: pruned.total,
        reference_accuracy,
        soft_accuracy,
        masked_accuracy,
        pruned_accuracy: pruned_accuracy(&pruned, &task.test)?,
        epochs: record.epochs,
    };

    std::fs::create_dir_all(&out).map_err(CliError::io(format!("creating {}", out.display())))?;
    let mut meta = ckpt.meta.clone();
    meta.insert("compressed_task".into(), opts.task.to_string());
    meta.insert("compress_c".into(), opts.c.to_string());
    meta.insert("compress_threshold".into(), opts.threshold.to_string());
    Checkpoint { net: pruned.net.clone(), hat: Some(hat), tasks_trained: 1, meta }.save(&out.join(PRUNED_FILE))?;
    write_atomic(&stats_path, serde_json::to_string_pretty(&stats).expect("stats serialize").as_bytes())?;
    Ok(stats)
}
