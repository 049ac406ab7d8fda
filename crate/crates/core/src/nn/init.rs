use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Glorot/Xavier uniform on a `[fan_out × fan_in]` matrix.
    XavierUniform,
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

pub fn init_weights(shape: &[usize], scheme: InitScheme, rng: &mut Rng) -> Result<Tensor> {
    let len: usize = shape.iter().product();
    if len == 0 {
        return Err(arg_err!("cannot initialize empty shape {shape:?}"));
    }
    let data: Vec<f64> = match scheme {
        InitScheme::XavierUniform => {
            let [fan_out, fan_in] = shape else {
                return Err(arg_err!("xavier init needs a 2-D shape, got {shape:?}"));
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
        }
        InitScheme::Gaussian { mean, std } => {
            if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                return Err(arg_err!("gaussian init needs finite mean and std > 0, got ({mean}, {std})"));
            }
            let dist = Normal::new(mean, std).map_err(|e| arg_err!("gaussian init: {e}"))?;
            (0..len).map(|_| dist.sample(rng)).collect()
        }
        InitScheme::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite() && low < high) {
                return Err(arg_err!("uniform init needs finite low < high, got ({low}, {high})"));
            }
            let dist = Uniform::new(low, high).map_err(|e| arg_err!("uniform init: {e}"))?;
            (0..len).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::from_vec(shape, data)
}
