//! Plain SGD and the validation-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// `p ← p − lr·g`. Rejects non-finite gradients before touching `params`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(dim_err!("{} params vs {} grads", params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub decay: f64,
    pub lr_min: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            decay: 3.0,
            lr_min: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    /// Consecutive epochs without improvement.
    pub patience_counter: usize,
    pub best_valid_loss: f64,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            patience_counter: 0,
            best_valid_loss: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStep {
    pub lr: f64,
    pub improved: bool,
    pub stop: bool,
}

/// Feed one epoch's validation loss. Improvement means a strictly lower loss;
/// after `patience` epochs without it the rate is divided by `decay`, and
/// training stops once the rate falls below `lr_min`.
pub fn plateau_schedule(
    state: &mut OptimizerState,
    cfg: &PlateauConfig,
    valid_loss: f64,
) -> Result<PlateauStep> {
    if !valid_loss.is_finite() {
        return Err(Error::Numeric(format!("validation loss is {valid_loss}")));
    }
    let improved = valid_loss < state.best_valid_loss;
    if improved {
        state.best_valid_loss = valid_loss;
        state.patience_counter = 0;
    } else {
        state.patience_counter += 1;
        if state.patience_counter >= cfg.patience {
            state.lr /= cfg.decay;
            state.patience_counter = 0;
        }
    }
    Ok(PlateauStep {
        lr: state.lr,
        improved,
        stop: state.lr < cfg.lr_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_bitwise() {
        let mut p = vec![1.5, -0.0, 3.25e-300, f64::MIN_POSITIVE];
        let before: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        sgd_step(&mut p, &[0.0; 4], 0.05).unwrap();
        assert_eq!(before, p.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn simple_step() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.05).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = vec![1.0, 2.0];
        assert!(matches!(sgd_step(&mut p, &[0.5, f64::NAN], 0.1), Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn five_flat_epochs_divide_rate_by_three() {
        let cfg = PlateauConfig::default();
        let mut st = OptimizerState::new(0.05);
        plateau_schedule(&mut st, &cfg, 1.0).unwrap();
        for i in 0..5 {
            let step = plateau_schedule(&mut st, &cfg, 1.0).unwrap();
            if i < 4 {
                assert_eq!(step.lr, 0.05);
            } else {
                assert!((step.lr - 0.05 / 3.0).abs() < 1e-17);
                assert!(!step.stop);
            }
        }
    }

    #[test]
    fn stops_below_minimum_rate() {
        let cfg = PlateauConfig::default();
        let mut st = OptimizerState::new(0.05);
        let mut decays = 0;
        let mut last = plateau_schedule(&mut st, &cfg, 1.0).unwrap();
        while !last.stop {
            last = plateau_schedule(&mut st, &cfg, 2.0).unwrap();
            if st.patience_counter == 0 {
                decays += 1;
                // the rate sequence is 0.05 / 3^k up to rounding of repeated division
                let want = 0.05 / 3f64.powi(decays);
                assert!((last.lr - want).abs() <= 4.0 * f64::EPSILON * want);
            }
        }
        // 0.05/3^6 ≈ 6.9e-5 is the first rate under 1e-4
        assert_eq!(decays, 6);
        assert!(last.lr < 1e-4);
    }

    #[test]
    fn steady_improvement_keeps_rate() {
        let cfg = PlateauConfig::default();
        let mut st = OptimizerState::new(0.05);
        for e in 0..200 {
            let step = plateau_schedule(&mut st, &cfg, 10.0 - e as f64 * 0.01).unwrap();
            assert!(step.improved);
            assert_eq!(step.lr, 0.05);
        }
    }

    #[test]
    fn ties_are_not_improvements() {
        let cfg = PlateauConfig::default();
        let mut st = OptimizerState::new(0.05);
        assert!(plateau_schedule(&mut st, &cfg, 1.0).unwrap().improved);
        assert!(!plateau_schedule(&mut st, &cfg, 1.0).unwrap().improved);
        assert_eq!(st.patience_counter, 1);
    }
}
