//! Per-layer unit vectors: task embeddings, attention sets and cumulative
//! attention all share the same layout.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::Tensor;

/// One vector per body layer, plus an optional vector over the raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVectors {
    pub input: Option<Vec<f64>>,
    pub layers: Vec<Vec<f64>>,
}

impl UnitVectors {
    pub fn filled(input_dim: Option<usize>, layer_sizes: &[usize], value: f64) -> Self {
        Self {
            input: input_dim.map(|n| vec![value; n]),
            layers: layer_sizes.iter().map(|&n| vec![value; n]).collect(),
        }
    }

    /// Input vector first (when present), then the layers in order.
    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.input.iter().chain(self.layers.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.input.iter_mut().chain(self.layers.iter_mut())
    }

    pub fn unit_count(&self) -> usize {
        self.iter().map(Vec::len).sum()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.input.as_ref().map(Vec::len) == other.input.as_ref().map(Vec::len)
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.len() == b.len())
    }

    pub(crate) fn ensure_layout(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(dim_err!("{what}: attention layouts differ"));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            input: self.input.as_deref().map(&mut f),
            layers: self.layers.iter().map(|v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two vectors with the same layout.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_layout(other, "zip")?;
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        Ok(Self {
            input: match (&self.input, &other.input) {
                (Some(a), Some(b)) => Some(comb(a, b)),
                _ => None,
            },
            layers: self.layers.iter().zip(&other.layers).map(|(a, b)| comb(a, b)).collect(),
        })
    }
}

/// Attention vectors `a^t_l` of one task, produced by the gate at `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSet {
    pub units: UnitVectors,
    pub scale: f64,
}

/// Running combination `a^{≤t}` of all completed tasks' attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeAttention {
    pub units: UnitVectors,
    pub tasks: usize,
}

impl CumulativeAttention {
    /// `a^{≤0} = 0`.
    pub fn empty(input_dim: Option<usize>, layer_sizes: &[usize]) -> Self {
        Self {
            units: UnitVectors::filled(input_dim, layer_sizes, 0.0),
            tasks: 0,
        }
    }
}

/// How a new task's attention is folded into the cumulative vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeScheme {
    /// `max(a^t, a^{≤t−1})`
    Max,
    /// `max(a^t, κ·a^{≤t−1})` with `κ ∈ (0, 1)`
    Kappa(f64),
}

impl CumulativeScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Max => Ok(()),
            Self::Kappa(k) if k > 0.0 && k < 1.0 => Ok(()),
            Self::Kappa(k) => Err(arg_err!("kappa must lie in (0, 1), got {k}")),
        }
    }
}

pub fn accumulate(
    current: &AttentionSet,
    prev: &CumulativeAttention,
    scheme: CumulativeScheme,
) -> Result<CumulativeAttention> {
    scheme.validate()?;
    current.units.ensure_layout(&prev.units, "accumulate")?;
    let decay = match scheme {
        CumulativeScheme::Max => 1.0,
        CumulativeScheme::Kappa(k) => k,
    };
    let units = current.units.zip_with(&prev.units, |a, p| {
        if decay == 1.0 {
            a.max(p)
        } else {
            a.max(decay * p)
        }
    })?;
    Ok(CumulativeAttention {
        units,
        tasks: prev.tasks + 1,
    })
}

/// `h′ = a ⊙ h`, broadcast over the batch rows.
pub fn apply_attention(h: &Tensor, a: &[f64]) -> Result<Tensor> {
    h.mul_row_broadcast(a)
}

/// 1 where `a_i > threshold`, else 0.
pub fn binarize(a: &[f64], threshold: f64) -> Vec<f64> {
    a.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect()
}

pub fn binarize_units(u: &UnitVectors, threshold: f64) -> UnitVectors {
    u.map(|v| binarize(v, threshold))
}
