//! Continual learning with hard attention to the task (HAT) on plain
//! multilayer perceptrons.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod hat;
pub mod metrics;
pub mod monitor;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
