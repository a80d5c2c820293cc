//! Measuring neuron universality across independently trained GPT2-style
//! language models, and classifying neurons by activation statistics and by
//! the functional role of their weights.
//!
//! The crate is organised by analysis stage:
//!
//! * [`tensor_io`]: binary tensor, token and label containers.
//! * [`model`]: the decoder, its hooks, interventions and weight preprocessing.
//! * [`corr`]: streaming cross-model Pearson correlation, rotation baselines
//!   and universality summaries.
//! * [`stats`]: activation moments, static weight metrics, layer percentiles.
//! * [`taxonomy`]: label generation, variance-reduction scoring, position
//!   mutual information, vocabulary-effect classes, duplicate weights.
//! * [`interventions`]: entropy-neuron sweeps, BOS attention gating scores and
//!   neuron-to-head path ablations.
//! * [`cli`]: the `unineurons` command-line tool.

pub mod cli;
pub mod corr;
pub mod error;
pub mod ids;
pub mod interventions;
pub mod model;
pub mod stats;
pub mod synth;
pub mod taxonomy;
pub mod tensor_io;

pub use error::{Error, Result};
pub use ids::{HeadId, NeuronId};
