//! Gradient conditioning on cumulative attention.
//!
//! A weight `w_ij` of layer `l` connects input unit `j` (layer `l−1`) to
//! output unit `i`; its gradient is scaled by `1 − min(a^{≤t}_{l,i}, a^{≤t}_{l−1,j})`.
//! Biases belong to their output unit and are scaled by `1 − a^{≤t}_{l,i}`.
//! The raw input carries no attention of its own and counts as fully
//! present, so first-layer weights are scaled by `1 − a^{≤t}_{1,i}`.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Masked copy of a `[N_out × N_in]` weight gradient. `a_in = None` means the
/// layer reads the raw input without input attention.
pub fn mask_weight_gradient(g: &Tensor, a_out: &[f64], a_in: Option<&[f64]>) -> Result<Tensor> {
    let mut out = g.clone();
    mask_weight_gradient_in_place(&mut out, a_out, a_in)?;
    Ok(out)
}

pub fn mask_weight_gradient_in_place(g: &mut Tensor, a_out: &[f64], a_in: Option<&[f64]>) -> Result<()> {
    if g.shape().len() != 2 || g.rows() != a_out.len() {
        return Err(dim_err!(
            "gradient shape {:?} vs {} output units",
            g.shape(),
            a_out.len()
        ));
    }
    let cols = g.cols();
    match a_in {
        Some(a_in) => {
            if a_in.len() != cols {
                return Err(dim_err!("gradient has {cols} inputs, attention has {}", a_in.len()));
            }
            for (row, &ao) in g.data_mut().chunks_exact_mut(cols).zip(a_out) {
                for (v, &ai) in row.iter_mut().zip(a_in) {
                    *v *= 1.0 - ao.min(ai);
                }
            }
        }
        None => {
            for (row, &ao) in g.data_mut().chunks_exact_mut(cols).zip(a_out) {
                let f = 1.0 - ao;
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    Ok(())
}

pub fn mask_bias_gradient_in_place(db: &mut Tensor, a_out: &[f64]) -> Result<()> {
    if db.len() != a_out.len() {
        return Err(dim_err!("bias gradient has {} entries, attention {}", db.len(), a_out.len()));
    }
    for (v, &ao) in db.data_mut().iter_mut().zip(a_out) {
        *v *= 1.0 - ao;
    }
    Ok(())
}
