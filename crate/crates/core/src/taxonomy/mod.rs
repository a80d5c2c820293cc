//! Explanations for neurons: label generation and variance-reduction scoring,
//! position mutual information, vocabulary-effect classes and weight
//! neighbours.

mod labels;
mod neighbors;
mod position;
mod riv;
mod vocab;
mod vocab_effect;

pub use labels::{generate_labels, generate_suite, position_classes, word_starts, LabelSpec, LabelTest, PositionClass};
pub use neighbors::{nearest_weight_neighbor, NeighborRecord, WeightBasis};
pub use position::{
    bin_of, equal_mass_edges, mi_from_counts, position_bin, position_mutual_information, PositionMi, PositionProfile, DEFAULT_ACT_BINS,
    DEFAULT_POS_BINS,
};
pub use riv::{reduction_in_variance, RivResult};
pub use vocab::VocabMeta;
pub use vocab_effect::{
    classify_moments, classify_vocab_effect, variance_cutoff, VocabClass, VocabEffectClass, VocabThresholds,
    DEFAULT_KURTOSIS_THRESHOLD, DEFAULT_VARIANCE_QUANTILE,
};
