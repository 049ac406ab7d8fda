//! Scaled sigmoid gate, the per-batch scale annealing and the embedding
//! gradient compensation that undoes the annealed sigmoid's slope.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Bound on `|s·e|` wherever it enters `σ` or `cosh`.
pub const SCALE_CLAMP: f64 = 50.0;

/// Embeddings are projected back into `[−EMBEDDING_BOUND, EMBEDDING_BOUND]`.
pub const EMBEDDING_BOUND: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealScheme {
    /// Linear sweep from `1/s_max` to `s_max` over the batches of an epoch.
    Paper,
    /// `s_max·(b−1)/(B−1)`, floored at `1/s_max`.
    Simple,
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_scaled(se: f64) -> f64 {
    se.clamp(-SCALE_CLAMP, SCALE_CLAMP)
}

/// `a_i = σ(clamp(s·e_i))`.
pub fn gate(e: &[f64], s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(arg_err!("gate scale must be positive and finite, got {s}"));
    }
    Ok(e.iter().map(|&v| logistic(clamp_scaled(s * v))).collect())
}

/// `∂a_i/∂e_i = s·σ(s e_i)·σ(−s e_i)`, and zero where the clamp is active.
pub fn gate_derivative(e: &[f64], s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(arg_err!("gate scale must be positive and finite, got {s}"));
    }
    Ok(e.iter()
        .map(|&v| {
            let x = s * v;
            if x.abs() >= SCALE_CLAMP {
                0.0
            } else {
                s * logistic(x) * logistic(-x)
            }
        })
        .collect())
}

/// Gate scale for batch `b` (1-based) out of `batches`.
pub fn anneal_s(b: usize, batches: usize, s_max: f64, scheme: AnnealScheme) -> Result<f64> {
    if batches == 0 || b == 0 || b > batches {
        return Err(arg_err!("batch index {b} outside 1..={batches}"));
    }
    if !(s_max >= 1.0 && s_max.is_finite()) {
        return Err(arg_err!("s_max must be finite and ≥ 1, got {s_max}"));
    }
    let s_min = 1.0 / s_max;
    if batches == 1 {
        return Ok(s_max);
    }
    let r = (b - 1) as f64 / (batches - 1) as f64;
    Ok(match scheme {
        // written as a lerp so that both endpoints are exact
        AnnealScheme::Paper => (1.0 - r) * s_min + r * s_max,
        AnnealScheme::Simple => (s_max * r).max(s_min),
    })
}

/// `q′_i = s_max·(cosh(clamp(s e_i)) + 1) / (s·(cosh(e_i) + 1)) · q_i`.
pub fn compensate_embedding_gradient(q: &[f64], e: &[f64], s: f64, s_max: f64) -> Result<Vec<f64>> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(arg_err!("compensation needs s > 0, got {s}"));
    }
    if q.len() != e.len() {
        return Err(arg_err!("{} gradients for {} embedding entries", q.len(), e.len()));
    }
    Ok(q.iter()
        .zip(e)
        .map(|(&qi, &ei)| {
            let num = clamp_scaled(s * ei).cosh() + 1.0;
            let den = ei.cosh() + 1.0;
            s_max / s * num / den * qi
        })
        .collect())
}

/// Project embeddings back into the sigmoid's active range.
pub fn clamp_embedding(e: &mut [f64]) {
    for v in e {
        *v = v.clamp(-EMBEDDING_BOUND, EMBEDDING_BOUND);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_embedding_gives_half() {
        for s in [0.0025, 1.0, 400.0] {
            assert!(gate(&[0.0, 0.0], s).unwrap().iter().all(|&a| a == 0.5));
        }
    }

    #[test]
    fn saturated_gate() {
        let a = gate(&[6.0, -6.0], 400.0).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12);
        assert!(a[1] > 0.0 && a[1] < 1e-12);
    }

    #[test]
    fn unit_gate_value() {
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        let a = gate(&[1.0], 1.0).unwrap()[0];
        assert!((a - want).abs() < 1e-15);
        assert!((a - 0.731_058_578_63).abs() < 1e-11);
    }

    #[test]
    fn anneal_endpoints_and_midpoint() {
        for s_max in [25.0, 400.0, 800.0] {
            assert_eq!(anneal_s(1, 57, s_max, AnnealScheme::Paper).unwrap(), 1.0 / s_max);
            assert_eq!(anneal_s(57, 57, s_max, AnnealScheme::Paper).unwrap(), s_max);
        }
        let mid = anneal_s(51, 101, 400.0, AnnealScheme::Paper).unwrap();
        assert!((mid - 200.00125).abs() < 1e-10);
        assert_eq!(anneal_s(1, 1, 400.0, AnnealScheme::Paper).unwrap(), 400.0);
    }

    #[test]
    fn simple_anneal_is_floored() {
        assert_eq!(anneal_s(1, 10, 400.0, AnnealScheme::Simple).unwrap(), 1.0 / 400.0);
        assert_eq!(anneal_s(10, 10, 400.0, AnnealScheme::Simple).unwrap(), 400.0);
        let s = anneal_s(4, 10, 400.0, AnnealScheme::Simple).unwrap();
        assert!((s - 400.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn anneal_rejects_out_of_range() {
        assert!(anneal_s(0, 10, 400.0, AnnealScheme::Paper).is_err());
        assert!(anneal_s(11, 10, 400.0, AnnealScheme::Paper).is_err());
        assert!(anneal_s(1, 10, 0.5, AnnealScheme::Paper).is_err());
    }

    #[test]
    fn compensation_special_cases() {
        let q = [0.3, -1.2];
        let e0 = [0.0, 0.0];
        let c = compensate_embedding_gradient(&q, &e0, 10.0, 400.0).unwrap();
        for (ci, qi) in c.iter().zip(q) {
            assert!((ci - 40.0 * qi).abs() < 1e-12);
        }
        let e = [1.3, -4.0];
        let c = compensate_embedding_gradient(&q, &e, 1.0, 400.0).unwrap();
        for (ci, qi) in c.iter().zip(q) {
            assert!((ci - 400.0 * qi).abs() < 1e-9 * ci.abs());
        }
    }

    #[test]
    fn compensation_ratio_example() {
        let ratio = compensate_embedding_gradient(&[1.0], &[2.0], 10.0, 100.0).unwrap()[0];
        let want = 100.0 * (20.0f64.cosh() + 1.0) / (10.0 * (2.0f64.cosh() + 1.0));
        assert!((ratio - want).abs() / want < 1e-14);
        // ≈ 5.094e8
        assert!((ratio / 509_392_335.890_539 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensation_rejects_nonpositive_scale() {
        assert!(compensate_embedding_gradient(&[1.0], &[0.0], 0.0, 400.0).is_err());
    }

    #[test]
    fn derivative_vanishes_beyond_clamp() {
        let d = gate_derivative(&[1.0, 0.0], 400.0).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 100.0);
    }
}
