//! GPT2-style decoder: weights, preprocessing, and an instrumented forward pass.

mod activation;
mod config;
mod forward;
mod hooks;
mod preprocess;
mod weights;

pub use activation::{gelu, gelu_exact, gelu_tanh};
pub use config::{Activation, ModelConfig};
pub use forward::{
    entropy_of_logits, layer_norm, layer_norm_row, log_sum_exp, ForwardOutput, NeuronSide,
};
pub use hooks::{HookPoint, HookSet, HookTrace, Intervention, Positions};
pub use preprocess::{center_writing_and_unembed, fold_layer_norm, preprocess};
pub use weights::{AttentionWeights, Block, LayerNormParams, MlpWeights, ModelWeights};

#[cfg(test)]
mod tests;
