//! Causal experiments: fixing a neuron across a value grid, BOS attention
//! gating scores and neuron-to-head path ablation.

mod bos;
mod entropy;

pub use bos::{
    bos_heuristic_scores, bos_key, bos_query_direction, bos_scores_for_heads, bos_value_norm_ratio, path_ablation,
    AblationSample, BosScore, BosScoreTable, HeadBaseline, HeadValueRatio, PathAblationResult, ValueNormReport,
};
pub use entropy::{
    default_grid, entropy_intervention, linspace, select_controls, validate_grid, EntropyExperimentResult, GridPoint,
};
