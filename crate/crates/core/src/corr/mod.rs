//! Cross-model neuron correlation.
//!
//! [`CorrState`] keeps running sums `Σx`, `Σx²`, `Σy`, `Σy²` and `Σxy` so
//! Pearson correlations over arbitrarily long token streams need memory
//! proportional only to the neuron counts. [`RotationBaseline`] mixes each
//! layer of the comparison model with a random Gaussian matrix; how much a
//! neuron's best match beats the best rotated unit is its excess
//! correlation, summarised by [`summarize_universality`].

mod depth;
mod pipeline;
mod rotation;
mod state;
mod universality;

pub use depth::{depth_specialization, LayerMap};
pub use pipeline::{correlate_models, CorrelateOptions, CorrelationRun};
pub use rotation::RotationBaseline;
pub use state::{CorrState, DEFAULT_TILE};
pub use universality::{
    max_with_index, summarize_matrices, summarize_universality, ComparisonMax,
    UniversalityRecord, DEFAULT_THRESHOLD,
};
