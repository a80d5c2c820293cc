//! Per-neuron activation moments, static weight metrics and within-layer
//! percentiles.
//!
//! Kurtosis everywhere is the plain fourth standardized moment (a Gaussian
//! gives 3), not the excess form some libraries report.

mod moments;
mod percentile;
mod stream;
mod summary;
mod weights;

pub use moments::{vector_moments, MomentBank, MomentState, Moments};
pub use percentile::{quantile, quantile_sorted, LayerPercentileTable};
pub use stream::activation_moments;
pub use summary::{fmt_f64, join_summaries, percentile_table, write_summary_csv, NeuronSummary, METRICS};
pub use weights::{cosine, for_each_vocab_effect, norm, unembed_column_norms, weight_summaries, WeightSummary};
