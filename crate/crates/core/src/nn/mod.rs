//! Dense network kernel: layers, loss, SGD and the plateau schedule.

pub mod init;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;

pub use init::{init_weights, InitScheme};
pub use layer::{affine, dense_backward, dense_backward_with, dense_forward, DenseCache, DenseGrads, DenseLayer};
pub use loss::{argmax, softmax_xent, softmax_xent_batch};
pub use network::{BackwardScope, GateGrads, ModelSpec, NetGrads, Network, Tape, UnitGates};
pub use optim::{plateau_schedule, sgd_step, OptimizerState, PlateauConfig, PlateauStep};
