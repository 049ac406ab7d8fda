//! Capacity monitoring, cross-task weight reuse and mask-driven pruning.
//!
//! A body weight is active when both of its endpoint units are active after
//! binarization. The raw input counts as always active unless input
//! attention supplies its own vector. Active sets are products of unit sets,
//! so every count below is a product of per-layer unit counts.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::hat::{binarize_units, HatState, UnitVectors};
use crate::nn::{Network, UnitGates};
use crate::tensor::Tensor;

fn ones(v: &[f64]) -> usize {
    v.iter().filter(|&&x| x == 1.0).count()
}

/// `(active, total)` weights of each body layer for binary unit vectors.
fn layer_counts(bin: &UnitVectors, input_dim: usize) -> Vec<(usize, usize)> {
    let mut fan_in = input_dim;
    let mut active_in = bin.input.as_deref().map_or(input_dim, ones);
    bin.layers
        .iter()
        .map(|out| {
            let a = ones(out);
            let c = (a * active_in, out.len() * fan_in);
            fan_in = out.len();
            active_in = a;
            c
        })
        .collect()
}

/// Fraction of body weights whose endpoints are both active.
pub fn capacity_usage(attention: &UnitVectors, input_dim: usize, threshold: f64) -> f64 {
    capacity_sample(0, 0, attention, input_dim, threshold).capacity
}

/// Capacity claimed once the live task's attention is folded into the past.
pub fn live_capacity(past: &UnitVectors, live: &UnitVectors, input_dim: usize, threshold: f64) -> Result<f64> {
    let bin_past = binarize_units(past, threshold);
    let bin_live = binarize_units(live, threshold);
    let merged = bin_past.zip_with(&bin_live, f64::max)?;
    Ok(capacity_usage(&merged, input_dim, threshold))
}

/// Active-weight fraction of body layer `layer` after task `t` (0-based).
/// With `include_past` the cumulative attention counts; otherwise only units
/// newly claimed by task `t`.
pub fn layer_usage(hat: &HatState, input_dim: usize, t: usize, layer: usize, include_past: bool) -> Result<f64> {
    if layer >= hat.layer_sizes().len() {
        return Err(arg_err!("no body layer {layer}"));
    }
    let thr = hat.config().threshold;
    let units = if include_past {
        binarize_units(&hat.cumulative(t + 1)?.units, thr)
    } else {
        let past = binarize_units(&hat.cumulative(t)?.units, thr);
        let own = binarize_units(&hat.snapshot(t)?.units, thr);
        own.zip_with(&past, |a, p| a * (1.0 - p))?
    };
    let (active, total) = layer_counts(&units, input_dim)[layer];
    Ok(active as f64 / total as f64)
}

/// `|active(a) ∩ active(b)| / |active(a)|` over body weights, for binary unit vectors.
pub fn reuse_fraction(a: &UnitVectors, b: &UnitVectors, input_dim: usize) -> Result<f64> {
    let both = a.zip_with(b, f64::min)?;
    let own: usize = layer_counts(a, input_dim).iter().map(|c| c.0).sum();
    let shared: usize = layer_counts(&both, input_dim).iter().map(|c| c.0).sum();
    Ok(if own == 0 { 0.0 } else { shared as f64 / own as f64 })
}

/// Share of task `i`'s active weights that task `j > i` also uses.
pub fn weight_reuse(hat: &HatState, input_dim: usize, i: usize, j: usize) -> Result<f64> {
    if j <= i {
        return Err(arg_err!("reuse needs a later task: i={i}, j={j}"));
    }
    let thr = hat.config().threshold;
    let a = binarize_units(&hat.snapshot(i)?.units, thr);
    let b = binarize_units(&hat.snapshot(j)?.units, thr);
    reuse_fraction(&a, &b, input_dim)
}

/// Upper-triangular reuse matrix over all completed tasks; `None` on and below the diagonal.
pub fn reuse_matrix(hat: &HatState, input_dim: usize) -> Result<Vec<Vec<Option<f64>>>> {
    let n = hat.completed_tasks();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if j > i { weight_reuse(hat, input_dim, i, j).map(Some) } else { Ok(None) })
                .collect()
        })
        .collect()
}

/// A network reduced to the weights one task uses.
#[derive(Debug, Clone)]
pub struct PrunedNetwork {
    pub net: Network,
    pub task: usize,
    /// Binary unit masks that selected the kept weights.
    pub units: UnitVectors,
    pub kept: usize,
    pub total: usize,
}

impl PrunedNetwork {
    /// Kept body weights over all body weights.
    pub fn compression(&self) -> f64 {
        self.kept as f64 / self.total as f64
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let gates = UnitGates {
            input: self.units.input.as_deref(),
            layers: &self.units.layers,
        };
        self.net.logits(x, self.task, Some(gates))
    }
}

/// Zero every body weight of `net` outside task `t`'s binarized attention.
pub fn prune(net: &Network, hat: &HatState, t: usize, threshold: f64) -> Result<PrunedNetwork> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(arg_err!("threshold must lie in [0, 1), got {threshold}"));
    }
    if net.layer_sizes() != hat.layer_sizes() {
        return Err(dim_err!("network layers {:?} vs attention {:?}", net.layer_sizes(), hat.layer_sizes()));
    }
    let soft = hat.attention(t, hat.config().s_max)?.units;
    let units = binarize_units(&soft, threshold);
    let mut pruned = net.clone();
    let mut a_in: Vec<f64> = units.input.clone().unwrap_or_else(|| vec![1.0; net.input_dim()]);
    for (layer, a_out) in pruned.body_mut().iter_mut().zip(&units.layers) {
        let cols = layer.weight.cols();
        for (row, &ao) in layer.weight.data_mut().chunks_exact_mut(cols).zip(a_out) {
            for (w, &ai) in row.iter_mut().zip(&a_in) {
                if ao.min(ai) != 1.0 {
                    *w = 0.0;
                }
            }
        }
        a_in.clone_from(a_out);
    }
    let counts = layer_counts(&units, net.input_dim());
    Ok(PrunedNetwork {
        net: pruned,
        task: t,
        kept: counts.iter().map(|c| c.0).sum(),
        total: counts.iter().map(|c| c.1).sum(),
        units,
    })
}

/// Per-epoch monitoring sample written alongside the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySample {
    pub task: usize,
    pub epoch: usize,
    pub capacity: f64,
    pub layers: Vec<f64>,
}

/// Capacity plus per-layer usage for binary-or-soft unit vectors.
pub fn capacity_sample(task: usize, epoch: usize, units: &UnitVectors, input_dim: usize, threshold: f64) -> CapacitySample {
    let counts = layer_counts(&binarize_units(units, threshold), input_dim);
    let active: usize = counts.iter().map(|c| c.0).sum();
    let total: usize = counts.iter().map(|c| c.1).sum();
    CapacitySample {
        task,
        epoch,
        capacity: active as f64 / total as f64,
        layers: counts.iter().map(|&(a, n)| a as f64 / n as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uv(layers: Vec<Vec<f64>>) -> UnitVectors {
        UnitVectors { input: None, layers }
    }

    #[test]
    fn capacity_extremes() {
        assert_eq!(capacity_usage(&uv(vec![vec![1.0; 3], vec![1.0; 2]]), 4, 0.5), 1.0);
        assert_eq!(capacity_usage(&uv(vec![vec![0.0; 3], vec![0.0; 2]]), 4, 0.5), 0.0);
    }

    #[test]
    fn two_two_two_example() {
        let u = uv(vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(capacity_usage(&u, 2, 0.5), 0.5);
    }

    #[test]
    fn reuse_extremes() {
        let a = uv(vec![vec![1.0, 1.0]]);
        assert_eq!(reuse_fraction(&a, &a, 2).unwrap(), 1.0);
        assert_eq!(reuse_fraction(&uv(vec![vec![1.0, 0.0]]), &uv(vec![vec![0.0, 1.0]]), 2).unwrap(), 0.0);
        assert_eq!(reuse_fraction(&uv(vec![vec![0.0, 0.0]]), &a, 2).unwrap(), 0.0);
    }

    #[test]
    fn three_of_four_reuse() {
        // four active weights, three shared
        let a = UnitVectors { input: Some(vec![1.0, 1.0, 1.0, 1.0]), layers: vec![vec![1.0]] };
        let b = UnitVectors { input: Some(vec![1.0, 1.0, 1.0, 0.0]), layers: vec![vec![1.0]] };
        assert_eq!(reuse_fraction(&a, &b, 4).unwrap(), 0.75);
    }
}
