//! Hard attention to the task: gates, annealing, cumulative masks, gradient
//! conditioning, embedding gradient compensation and the sparsity regularizer.

pub mod attention;
pub mod gate;
pub mod mask;
pub mod regularizer;
pub mod state;

pub use attention::{
    accumulate, apply_attention, binarize, binarize_units, AttentionSet, CumulativeAttention, CumulativeScheme,
    UnitVectors,
};
pub use gate::{
    anneal_s, clamp_embedding, compensate_embedding_gradient, gate, gate_derivative, logistic, AnnealScheme,
    EMBEDDING_BOUND, SCALE_CLAMP,
};
pub use mask::{mask_bias_gradient_in_place, mask_weight_gradient, mask_weight_gradient_in_place};
pub use regularizer::{regularized_loss, sparsity_regularizer, RegScheme};
pub use state::{HatConfig, HatState};
