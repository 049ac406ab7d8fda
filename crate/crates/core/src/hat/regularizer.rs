//! Attention sparsity regularizer and the regularized loss.

use serde::{Deserialize, Serialize};

use super::attention::UnitVectors;
use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegScheme {
    /// `Σ a(1−a_prev) / Σ (1−a_prev)`: only units no past task claimed count.
    WeightedL1,
    /// `Σ a / Σ N_l`
    PlainL1,
    /// `Σ a² / Σ N_l`
    L2,
}

/// Regularizer value and its gradient with respect to every attention entry.
///
/// `current` is the live task's attention, `prev` the cumulative attention of
/// all earlier tasks. Both must share a layout.
pub fn sparsity_regularizer(current: &UnitVectors, prev: &UnitVectors, scheme: RegScheme) -> Result<(f64, UnitVectors)> {
    current.ensure_layout(prev, "regularizer")?;
    let units = current.unit_count() as f64;
    match scheme {
        RegScheme::WeightedL1 => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, p) in current.iter().zip(prev.iter()) {
                for (&ai, &pi) in a.iter().zip(p) {
                    num += ai * (1.0 - pi);
                    den += 1.0 - pi;
                }
            }
            if den == 0.0 {
                return Ok((0.0, current.map(|v| vec![0.0; v.len()])));
            }
            let grad = prev.map(|p| p.iter().map(|&pi| (1.0 - pi) / den).collect());
            Ok((num / den, grad))
        }
        RegScheme::PlainL1 => {
            let sum: f64 = current.iter().flatten().sum();
            Ok((sum / units, current.map(|v| vec![1.0 / units; v.len()])))
        }
        RegScheme::L2 => {
            let sum: f64 = current.iter().flatten().map(|a| a * a).sum();
            Ok((sum / units, current.map(|v| v.iter().map(|a| 2.0 * a / units).collect())))
        }
    }
}

/// `L′ = L + c·R`.
pub fn regularized_loss(task_loss: f64, r: f64, c: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(arg_err!("regularization constant must be finite and ≥ 0, got {c}"));
    }
    Ok(task_loss + c * r)
}
