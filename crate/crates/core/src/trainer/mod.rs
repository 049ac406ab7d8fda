//! Sequential task training: the HAT update loop, the SGD baselines and the
//! joint multitask reference.

mod sequence;
mod task;

use serde::{Deserialize, Serialize};

use crate::data::TaskView;
use crate::error::{arg_err, Result};
use crate::hat::{sparsity_regularizer, HatConfig, HatState, UnitVectors};
use crate::monitor::CapacitySample;
use crate::nn::{argmax, softmax_xent_batch, Network, PlateauConfig, UnitGates};

pub use sequence::{run_sequence, train_joint, JointOutcome, RunOutcome, RunReport};
pub use task::train_task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hat,
    /// Plain SGD on a multi-head network.
    Sgd,
    /// SGD on the first task, then only the task heads train.
    SgdFreeze,
    /// One joint model per task prefix.
    Multitask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay: f64,
    pub lr_min: f64,
    pub mode: Mode,
    /// Roll back to the epoch with the lowest validation loss when a task ends.
    pub restore_best: bool,
    pub hat: HatConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            lr_decay: 3.0,
            lr_min: 1e-4,
            mode: Mode::Hat,
            restore_best: true,
            hat: HatConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(arg_err!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(arg_err!("batch_size, max_epochs and patience must be positive"));
        }
        if !(self.lr_decay > 1.0 && self.lr_decay.is_finite()) {
            return Err(arg_err!("lr_decay must exceed 1, got {}", self.lr_decay));
        }
        if !(self.lr_min > 0.0 && self.lr_min.is_finite()) {
            return Err(arg_err!("lr_min must be positive, got {}", self.lr_min));
        }
        self.hat.validate()
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            patience: self.patience,
            decay: self.lr_decay,
            lr_min: self.lr_min,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub task: usize,
    /// 1-based.
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Mean regularizer value over the epoch's batches (HAT only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reg: Option<f64>,
    /// Capacity with the live task's attention folded in (HAT only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub capacity: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunRecord {
    pub task: usize,
    pub epochs: usize,
    pub best_valid_loss: f64,
    pub final_valid_loss: f64,
    pub test_accuracy: f64,
    /// Stopped because the rate fell below `lr_min` rather than at `max_epochs`.
    pub converged: bool,
    #[serde(default)]
    pub capacity: Vec<CapacitySample>,
}

/// Receives progress while a run is in flight.
pub trait Observer {
    fn epoch(&mut self, _record: &EpochRecord) {}

    /// Called after task `t` (or prefix `t` in multitask mode) is complete.
    fn task_done(&mut self, _t: usize, _net: &Network, _hat: Option<&HatState>, _record: &TaskRunRecord) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Collects epoch records in memory.
impl Observer for Vec<EpochRecord> {
    fn epoch(&mut self, record: &EpochRecord) {
        self.push(record.clone());
    }
}

/// Masks used at test time.
#[derive(Debug, Clone, Copy)]
pub enum Gating<'a> {
    Off,
    /// Task attention at `s_max`; binarized when `strict`.
    Hat { state: &'a HatState, strict: bool },
}

impl Gating<'_> {
    /// Default evaluation gating for a mode.
    pub fn for_mode<'a>(mode: Mode, hat: Option<&'a HatState>) -> Gating<'a> {
        match (mode, hat) {
            (Mode::Hat, Some(state)) => Gating::Hat {
                state,
                strict: state.config().strict_binary,
            },
            _ => Gating::Off,
        }
    }

    fn units(&self, task: usize) -> Result<Option<UnitVectors>> {
        match self {
            Gating::Off => Ok(None),
            Gating::Hat { state, strict } => state.eval_attention(task, *strict).map(Some),
        }
    }
}

pub(crate) const EVAL_CHUNK: usize = 2000;

fn as_gates(u: &UnitVectors) -> UnitGates<'_> {
    UnitGates {
        input: u.input.as_deref(),
        layers: &u.layers,
    }
}

/// Fraction of `view` classified correctly by head `task`.
pub fn evaluate(net: &Network, gating: Gating<'_>, task: usize, view: &TaskView) -> Result<f64> {
    if view.is_empty() {
        return Err(arg_err!("cannot evaluate on an empty split"));
    }
    let units = gating.units(task)?;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..view.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = view.gather(chunk)?;
        let logits = net.logits(&x, task, units.as_ref().map(as_gates))?;
        correct += (0..y.len()).filter(|&i| argmax(logits.row(i)) == y[i]).count();
    }
    Ok(correct as f64 / view.len() as f64)
}

/// Test logits of head `task` for every sample of `view`, row-major.
pub fn logits_of(net: &Network, gating: Gating<'_>, task: usize, view: &TaskView) -> Result<Vec<f64>> {
    let units = gating.units(task)?;
    let all: Vec<usize> = (0..view.len()).collect();
    let mut out = Vec::with_capacity(view.len() * net.heads()[task].outputs());
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, _) = view.gather(chunk)?;
        out.extend_from_slice(net.logits(&x, task, units.as_ref().map(as_gates))?.data());
    }
    Ok(out)
}

/// Mean cross-entropy of head `task` over `view` under `gates`.
fn mean_xent(net: &Network, gates: Option<&UnitVectors>, task: usize, view: &TaskView) -> Result<f64> {
    let all: Vec<usize> = (0..view.len()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = view.gather(chunk)?;
        let logits = net.logits(&x, task, gates.map(as_gates))?;
        let (loss, _) = softmax_xent_batch(&logits, &y)?;
        total += loss * y.len() as f64;
    }
    Ok(total / view.len() as f64)
}

/// Validation objective: cross-entropy, plus `c·R` at `s_max` for HAT.
fn validation_loss(net: &Network, hat: Option<&HatState>, task: usize, view: &TaskView) -> Result<(f64, Option<f64>)> {
    match hat {
        None => Ok((mean_xent(net, None, task, view)?, None)),
        Some(h) => {
            let att = h.attention(task, h.config().s_max)?.units;
            let loss = mean_xent(net, Some(&att), task, view)?;
            let (r, _) = sparsity_regularizer(&att, &h.cumulative(task)?.units, h.config().regularizer)?;
            Ok((loss + h.config().c * r, Some(r)))
        }
    }
}
