//! Whole runs: a task sequence in one mode, and the joint multitask reference.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::task::sgd_batch;
use super::{evaluate, train_task, validation_loss, EpochRecord, Gating, Mode, Observer, TaskRunRecord, TrainConfig};
use crate::data::{SuiteManifest, Task, TaskSuite};
use crate::error::{arg_err, Error, Result};
use crate::hat::HatState;
use crate::metrics::{random_stratified_accuracy, AccuracyMatrix};
use crate::nn::{plateau_schedule, BackwardScope, ModelSpec, Network, OptimizerState};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub suite: SuiteManifest,
    /// `A[t][τ]`; in multitask mode row `t` comes from the joint model of tasks `0..=t`.
    pub accuracy: AccuracyMatrix,
    /// Analytic random-stratified accuracy of each task's test split.
    pub random: Vec<f64>,
    pub tasks: Vec<TaskRunRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub net: Network,
    pub hat: Option<HatState>,
}

fn fresh_network(suite_dim: usize, spec: &ModelSpec, heads: &[usize], seed: u64) -> Result<Network> {
    Network::new(suite_dim, spec, heads, &mut stream(seed, Stream::Init, 0))
}

/// Train the suite's tasks in order and test every seen task after each one.
pub fn run_sequence(
    suite: &TaskSuite,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(arg_err!("empty task suite"));
    }
    let random = suite
        .tasks
        .iter()
        .map(|t| random_stratified_accuracy(&t.test.labels()))
        .collect::<Result<Vec<_>>>()?;
    let mut accuracy = AccuracyMatrix::new();
    let mut records = Vec::with_capacity(suite.len());

    if cfg.mode == Mode::Multitask {
        let mut last = None;
        for t in 0..suite.len() {
            let joint = train_joint(&suite.tasks[..=t], spec, cfg, seed, observer)?;
            accuracy.push_row(joint.accuracies.clone())?;
            records.push(joint.record.clone());
            last = Some(joint.net);
        }
        let report = RunReport { mode: cfg.mode, seed, suite: suite.manifest().clone(), accuracy, random, tasks: records };
        return Ok(RunOutcome { report, net: last.expect("non-empty suite"), hat: None });
    }

    let mut net = fresh_network(suite.dim(), spec, &suite.head_sizes(), seed)?;
    let mut hat = match cfg.mode {
        Mode::Hat => Some(HatState::new(cfg.hat.clone(), suite.dim(), &spec.hidden)?),
        _ => None,
    };
    for (t, task) in suite.tasks.iter().enumerate() {
        records.push(train_task(&mut net, hat.as_mut(), task, t, cfg, seed, observer)?);
        let gating = Gating::for_mode(cfg.mode, hat.as_ref());
        let row = suite.tasks[..=t]
            .iter()
            .enumerate()
            .map(|(tau, prev)| evaluate(&net, gating, tau, &prev.test))
            .collect::<Result<Vec<_>>>()?;
        accuracy.push_row(row)?;
    }
    let report = RunReport { mode: cfg.mode, seed, suite: suite.manifest().clone(), accuracy, random, tasks: records };
    Ok(RunOutcome { report, net, hat })
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub net: Network,
    /// Test accuracy per task.
    pub accuracies: Vec<f64>,
    pub record: TaskRunRecord,
}

/// Shared body and one head per task, trained on all of `tasks` at once.
///
/// Every batch comes from a task drawn uniformly at random; an epoch has as
/// many batches as the largest task. The validation loss is the mean over
/// tasks. No attention is used.
pub fn train_joint(
    tasks: &[Task],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<JointOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(arg_err!("joint training needs at least one task"));
    }
    if tasks.iter().any(|t| t.train.is_empty() || t.valid.is_empty()) {
        return Err(arg_err!("joint training needs non-empty train and validation splits"));
    }
    let n = tasks.len();
    let heads: Vec<usize> = tasks.iter().map(Task::classes).collect();
    let mut net = fresh_network(tasks[0].train.dim(), spec, &heads, seed)?;
    let mut pick_rng = stream(seed, Stream::TaskOrder, n as u64);
    let mut shuffle: Vec<_> = (0..n).map(|k| stream(seed, Stream::Shuffle, k as u64)).collect();
    let mut dropout_rng = stream(seed, Stream::Dropout, 0);
    let mut orders: Vec<Vec<usize>> = tasks.iter().map(|t| (0..t.train.len()).collect()).collect();
    let mut cursor = vec![usize::MAX; n];
    let batches = orders.iter().map(|o| o.len().div_ceil(cfg.batch_size)).max().expect("non-empty");

    let plateau = cfg.plateau();
    let mut opt = OptimizerState::new(cfg.lr0);
    let mut best: Option<Network> = None;
    let mut best_loss = f64::INFINITY;
    let mut final_valid = f64::NAN;
    let mut epochs = 0;
    let mut converged = false;
    let last = n - 1;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        let lr = opt.lr;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for b in 0..batches {
            let k = if n == 1 { 0 } else { pick_rng.random_range(0..n) };
            let len = orders[k].len();
            if cursor[k] >= len {
                orders[k].shuffle(&mut shuffle[k]);
                cursor[k] = 0;
            }
            let end = (cursor[k] + cfg.batch_size).min(len);
            let (x, y) = tasks[k].train.gather(&orders[k][cursor[k]..end])?;
            cursor[k] = end;
            let loss = sgd_batch(&mut net, k, &x, &y, BackwardScope::Full, lr, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("joint epoch {epoch} batch {}: loss is {loss}", b + 1)));
            }
            loss_sum += loss * y.len() as f64;
            seen += y.len();
        }
        let mut valid_loss = 0.0;
        for (k, task) in tasks.iter().enumerate() {
            valid_loss += validation_loss(&net, None, k, &task.valid)?.0;
        }
        valid_loss /= n as f64;
        final_valid = valid_loss;
        let step = plateau_schedule(&mut opt, &plateau, valid_loss)?;
        if step.improved {
            best_loss = valid_loss;
            if cfg.restore_best {
                best = Some(net.clone());
            }
        }
        observer.epoch(&EpochRecord {
            task: last,
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            valid_loss,
            reg: None,
            capacity: None,
            improved: step.improved,
        });
        if step.stop {
            converged = true;
            break;
        }
    }
    if let Some(b) = best {
        net = b;
    }
    let accuracies = tasks
        .iter()
        .enumerate()
        .map(|(k, task)| evaluate(&net, Gating::Off, k, &task.test))
        .collect::<Result<Vec<_>>>()?;
    let record = TaskRunRecord {
        task: last,
        epochs,
        best_valid_loss: best_loss,
        final_valid_loss: final_valid,
        test_accuracy: accuracies[last],
        converged,
        capacity: Vec::new(),
    };
    observer.task_done(last, &net, None, &record)?;
    Ok(JointOutcome { net, accuracies, record })
}
