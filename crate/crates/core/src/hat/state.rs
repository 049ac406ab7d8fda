//! Per-run HAT state: configuration, task embeddings, post-task attention
//! snapshots and the cumulative attention history.

use serde::{Deserialize, Serialize};

use super::attention::{accumulate, binarize_units, AttentionSet, CumulativeAttention, CumulativeScheme, UnitVectors};
use super::gate::{gate, AnnealScheme};
use super::regularizer::RegScheme;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::nn::{init_weights, InitScheme};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HatConfig {
    pub s_max: f64,
    pub c: f64,
    pub anneal: AnnealScheme,
    pub cumulative: CumulativeScheme,
    pub regularizer: RegScheme,
    pub embedding_init: InitScheme,
    /// Learn an extra attention vector over the raw input features.
    pub input_attention: bool,
    /// Store binarized attention snapshots and evaluate with binarized masks.
    pub strict_binary: bool,
    /// Binarization threshold used by strict mode and the monitors.
    pub threshold: f64,
}

impl Default for HatConfig {
    fn default() -> Self {
        Self {
            s_max: 400.0,
            c: 0.75,
            anneal: AnnealScheme::Paper,
            cumulative: CumulativeScheme::Max,
            regularizer: RegScheme::WeightedL1,
            embedding_init: InitScheme::Gaussian { mean: 0.0, std: 1.0 },
            input_attention: false,
            strict_binary: false,
            threshold: 0.5,
        }
    }
}

impl HatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max >= 1.0 && self.s_max.is_finite()) {
            return Err(arg_err!("s_max must be finite and ≥ 1, got {}", self.s_max));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(arg_err!("c must be finite and ≥ 0, got {}", self.c));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(arg_err!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if matches!(self.embedding_init, InitScheme::XavierUniform) {
            return Err(arg_err!("embeddings take a gaussian or uniform init"));
        }
        self.cumulative.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatState {
    config: HatConfig,
    input_dim: Option<usize>,
    layer_sizes: Vec<usize>,
    embeddings: Vec<UnitVectors>,
    snapshots: Vec<AttentionSet>,
    /// `history[k]` is the cumulative attention after `k` completed tasks.
    history: Vec<CumulativeAttention>,
}

impl HatState {
    pub fn new(config: HatConfig, input_dim: usize, layer_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        if layer_sizes.is_empty() || layer_sizes.contains(&0) || input_dim == 0 {
            return Err(arg_err!("invalid layer sizes {layer_sizes:?} / input {input_dim}"));
        }
        let input_dim = config.input_attention.then_some(input_dim);
        Ok(Self {
            history: vec![CumulativeAttention::empty(input_dim, layer_sizes)],
            config,
            input_dim,
            layer_sizes: layer_sizes.to_vec(),
            embeddings: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    /// Rebuild from stored parts, checking every layout.
    pub fn from_parts(
        config: HatConfig,
        input_dim: Option<usize>,
        layer_sizes: Vec<usize>,
        embeddings: Vec<UnitVectors>,
        snapshots: Vec<AttentionSet>,
        history: Vec<CumulativeAttention>,
    ) -> Result<Self> {
        config.validate()?;
        if config.input_attention != input_dim.is_some() {
            return Err(Error::Consistency("input attention flag disagrees with stored vectors".into()));
        }
        let template = UnitVectors::filled(input_dim, &layer_sizes, 0.0);
        let layouts = embeddings
            .iter()
            .chain(snapshots.iter().map(|s| &s.units))
            .chain(history.iter().map(|h| &h.units));
        for u in layouts {
            template.ensure_layout(u, "stored hat state")?;
        }
        if snapshots.len() > embeddings.len() || history.len() != snapshots.len() + 1 {
            return Err(Error::Consistency(format!(
                "{} embeddings, {} snapshots, {} history entries",
                embeddings.len(),
                snapshots.len(),
                history.len()
            )));
        }
        Ok(Self {
            config,
            input_dim,
            layer_sizes,
            embeddings,
            snapshots,
            history,
        })
    }

    pub fn config(&self) -> &HatConfig {
        &self.config
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.input_dim
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Tasks with embeddings.
    pub fn task_count(&self) -> usize {
        self.embeddings.len()
    }

    /// Tasks whose attention has been folded into the cumulative vector.
    pub fn completed_tasks(&self) -> usize {
        self.snapshots.len()
    }

    /// Register a new task and draw its embeddings; returns its index.
    pub fn add_task(&mut self, seed: u64) -> Result<usize> {
        let t = self.embeddings.len();
        let mut rng = stream(seed, Stream::Embedding, t as u64);
        let scheme = self.config.embedding_init;
        let mut draw = |n: usize| -> Result<Vec<f64>> {
            let mut v = init_weights(&[n], scheme, &mut rng)?.into_data();
            super::gate::clamp_embedding(&mut v);
            Ok(v)
        };
        let input = self.input_dim.map(&mut draw).transpose()?;
        let layers = self.layer_sizes.iter().map(|&n| draw(n)).collect::<Result<Vec<_>>>()?;
        self.embeddings.push(UnitVectors { input, layers });
        Ok(t)
    }

    fn check_task(&self, t: usize) -> Result<()> {
        if t >= self.embeddings.len() {
            return Err(arg_err!("unknown task {t} ({} registered)", self.embeddings.len()));
        }
        Ok(())
    }

    pub fn embeddings(&self, t: usize) -> Result<&UnitVectors> {
        self.check_task(t)?;
        Ok(&self.embeddings[t])
    }

    pub fn embeddings_mut(&mut self, t: usize) -> Result<&mut UnitVectors> {
        self.check_task(t)?;
        if t < self.snapshots.len() {
            return Err(Error::State(format!("task {t} is complete; its embeddings are frozen")));
        }
        Ok(&mut self.embeddings[t])
    }

    pub fn all_embeddings(&self) -> &[UnitVectors] {
        &self.embeddings
    }

    /// Soft attention of task `t` at scale `s`.
    pub fn attention(&self, t: usize, s: f64) -> Result<AttentionSet> {
        self.check_task(t)?;
        let e = &self.embeddings[t];
        let units = UnitVectors {
            input: e.input.as_deref().map(|v| gate(v, s)).transpose()?,
            layers: e.layers.iter().map(|v| gate(v, s)).collect::<Result<_>>()?,
        };
        Ok(AttentionSet { units, scale: s })
    }

    /// Test-time masks of task `t`: the gate at `s_max`, binarized when `strict`.
    pub fn eval_attention(&self, t: usize, strict: bool) -> Result<UnitVectors> {
        let a = self.attention(t, self.config.s_max)?.units;
        Ok(if strict { binarize_units(&a, self.config.threshold) } else { a })
    }

    /// Attention snapshot stored when task `t` completed.
    pub fn snapshot(&self, t: usize) -> Result<&AttentionSet> {
        self.snapshots
            .get(t)
            .ok_or_else(|| arg_err!("task {t} has no snapshot ({} completed)", self.snapshots.len()))
    }

    pub fn snapshots(&self) -> &[AttentionSet] {
        &self.snapshots
    }

    /// Cumulative attention after `k` completed tasks (`k = 0` is all zeros).
    pub fn cumulative(&self, k: usize) -> Result<&CumulativeAttention> {
        self.history
            .get(k)
            .ok_or_else(|| arg_err!("no cumulative attention after {k} tasks ({} completed)", self.snapshots.len()))
    }

    pub fn current_cumulative(&self) -> &CumulativeAttention {
        self.history.last().expect("history starts with the empty entry")
    }

    pub fn history(&self) -> &[CumulativeAttention] {
        &self.history
    }

    /// Snapshot task `t` at `s_max` and fold it into the cumulative attention.
    /// Tasks must complete in registration order.
    pub fn complete_task(&mut self, t: usize) -> Result<()> {
        self.check_task(t)?;
        if t != self.snapshots.len() {
            return Err(Error::State(format!(
                "task {t} cannot complete; next expected is {}",
                self.snapshots.len()
            )));
        }
        let mut snap = self.attention(t, self.config.s_max)?;
        if self.config.strict_binary {
            snap.units = binarize_units(&snap.units, self.config.threshold);
        }
        let next = accumulate(&snap, self.current_cumulative(), self.config.cumulative)?;
        self.snapshots.push(snap);
        self.history.push(next);
        Ok(())
    }

    /// Replace task `t`'s embeddings, e.g. when restoring the best epoch.
    pub fn set_embeddings(&mut self, t: usize, e: UnitVectors) -> Result<()> {
        let slot = self.embeddings_mut(t)?;
        if !slot.same_layout(&e) {
            return Err(dim_err!("embedding layout mismatch for task {t}"));
        }
        *slot = e;
        Ok(())
    }
}
