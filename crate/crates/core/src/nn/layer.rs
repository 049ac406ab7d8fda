//! Fully-connected layer with explicit forward/backward.
//!
//! `y = x·Wᵀ + b` on a batch `x: [n × N_in]`; the activation is left to the
//! caller. In training mode inverted dropout scales kept outputs by
//! `1/(1 − rate)`, so evaluation needs no rescaling.

use rand::Rng as _;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, matmul_transposed, MatRef, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    dropout_rate: f64,
}

/// What `dense_backward` needs from the forward pass.
#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    input: Option<Tensor>,
    dropout_mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, dropout_rate: f64) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(dim_err!("weight must be 2-D, got {:?}", weight.shape()));
        }
        bias.ensure_shape(&[weight.rows()], "bias")?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(arg_err!("dropout rate must lie in [0, 1), got {dropout_rate}"));
        }
        Ok(Self {
            weight,
            bias,
            dropout_rate,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }
}

pub fn dense_forward(
    layer: &DenseLayer,
    x: &Tensor,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<(Tensor, DenseCache)> {
    let mut y = affine(layer, x)?;
    let mut dropout_mask = None;
    if train_mode && layer.dropout_rate > 0.0 {
        let keep = 1.0 - layer.dropout_rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..y.len())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        dropout_mask = Some(mask);
    }
    Ok((
        y,
        DenseCache {
            input: Some(x.clone()),
            dropout_mask,
        },
    ))
}

/// Eval-mode forward without a cache.
pub fn affine(layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(dim_err!("layer input must be 2-D, got {:?}", x.shape()));
    }
    let mut y = matmul_transposed(x, &layer.weight)?;
    let b = layer.bias.data();
    for row in y.data_mut().chunks_exact_mut(b.len()) {
        for (v, bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
    Ok(y)
}

pub fn dense_backward(layer: &DenseLayer, cache: &DenseCache, dy: &Tensor) -> Result<DenseGrads> {
    dense_backward_with(layer, cache, dy, true)
}

/// As [`dense_backward`]; `want_dx = false` skips the input gradient.
pub fn dense_backward_with(
    layer: &DenseLayer,
    cache: &DenseCache,
    dy: &Tensor,
    want_dx: bool,
) -> Result<DenseGrads> {
    let x = cache
        .input
        .as_ref()
        .ok_or_else(|| Error::State("dense_backward called without a forward cache".into()))?;
    if x.cols() != layer.inputs() {
        return Err(Error::State(format!(
            "forward cache has {} features but layer expects {}",
            x.cols(),
            layer.inputs()
        )));
    }
    dy.ensure_shape(&[x.rows(), layer.outputs()], "upstream gradient")?;

    let masked;
    let dy = match &cache.dropout_mask {
        Some(mask) => {
            let mut d = dy.clone();
            for (v, m) in d.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            masked = d;
            &masked
        }
        None => dy,
    };

    let mut dw = Tensor::zeros(&[layer.outputs(), layer.inputs()]);
    gemm(1.0, MatRef::of(dy).t(), MatRef::of(x), 0.0, dw.data_mut());
    let db = Tensor::vector(&dy.sum_rows());
    let dx = if want_dx {
        let mut dx = Tensor::zeros(&[x.rows(), layer.inputs()]);
        gemm(1.0, MatRef::of(dy), MatRef::of(&layer.weight), 0.0, dx.data_mut());
        Some(dx)
    } else {
        None
    };
    Ok(DenseGrads { dx, dw, db })
}
