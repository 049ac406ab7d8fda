use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

/// Categorical cross-entropy over softmax for one row of logits.
///
/// Returns the loss and `softmax − onehot`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(arg_err!("label {label} out of range for {} classes", logits.len()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let top = argmax(logits);
    let max = logits[top];
    // Σ_{j≠top} e^{x_j − max}; the top term is exactly 1
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let norm = 1.0 + rest;
    let mut grad: Vec<f64> = logits.iter().map(|&v| (v - max).exp() / norm).collect();
    // p_label − 1 == −Σ_{j≠label} p_j, without the cancellation
    let others: f64 = grad
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, p)| p)
        .sum();
    grad[label] = -others;
    let loss = (max - logits[label]) + rest.ln_1p();
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch; the returned gradient is already divided
/// by the batch size.
pub fn softmax_xent_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    if labels.len() != n {
        return Err(arg_err!("{} labels for {n} rows of logits", labels.len()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let inv = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_xent(logits.row(i), label)?;
        total += loss;
        for (d, v) in grad.row_mut(i).iter_mut().zip(g) {
            *d = v * inv;
        }
    }
    Ok((total * inv, grad))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_ln_k() {
        for k in [2usize, 5, 10] {
            let (loss, _) = softmax_xent(&vec![0.3; k], 1).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_logits_stay_accurate() {
        // ln(1 + e^{-20}) and σ(−20), both evaluated independently
        let tiny = (-20.0f64).exp();
        let want_loss = tiny.ln_1p();
        let want_p = tiny / (1.0 + tiny);
        let (loss, g) = softmax_xent(&[10.0, -10.0], 0).unwrap();
        assert!((loss - want_loss).abs() / want_loss < 1e-6, "{loss} vs {want_loss}");
        assert!((g[0] + want_p).abs() / want_p < 1e-9);
        assert!((g[1] - want_p).abs() / want_p < 1e-9);
        assert!((want_loss - 2.0611536e-9).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.5, 0.0, 0.7];
        let label = 2;
        let (_, g) = softmax_xent(&logits, label).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut dn = logits;
            up[i] += h;
            dn[i] -= h;
            let fd = (softmax_xent(&up, label).unwrap().0 - softmax_xent(&dn, label).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_xent(&[0.0, 1.0], 2), Err(Error::Argument(_))));
    }

    #[test]
    fn argmax_prefers_first_on_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
