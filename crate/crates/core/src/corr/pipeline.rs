use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use super::state::select_rows_f64;
use super::{CorrState, RotationBaseline, DEFAULT_TILE};
use crate::error::{Error, Result};
use crate::model::{ModelWeights, NeuronSide};
use crate::tensor_io::MaskedTokens;

#[derive(Debug, Clone, Copy)]
pub struct CorrelateOptions {
    pub tile_size: usize,
    /// Windows evaluated (in parallel) before each accumulator update. The
    /// update order depends only on this, never on the worker count.
    pub batch_windows: usize,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE,
            batch_windows: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrelationRun {
    /// Reference neurons against comparison neurons.
    pub corr: CorrState,
    /// Reference neurons against rotated comparison units.
    pub baseline: CorrState,
    pub total_tokens: usize,
    pub valid_tokens: usize,
    pub windows: usize,
}

/// Streams the token windows through both models and accumulates post-GeLU
/// correlations, plus the rotated-basis baseline for `reference` against
/// `comparison`.
pub fn correlate_models(
    reference: &ModelWeights,
    comparison: &ModelWeights,
    tokens: &MaskedTokens,
    rotation: &RotationBaseline,
    opts: CorrelateOptions,
) -> Result<CorrelationRun> {
    let (ca, cb) = (&reference.config, &comparison.config);
    if rotation.n_layer() != cb.n_layer || rotation.d_mlp() != cb.d_mlp {
        return Err(Error::Shape(format!(
            "rotation is {}×{} but comparison model has {} layers of {} neurons",
            rotation.n_layer(),
            rotation.d_mlp(),
            cb.n_layer,
            cb.d_mlp
        )));
    }
    let ctx = tokens.stream.context_length as usize;
    if ctx > ca.n_ctx || ctx > cb.n_ctx {
        return Err(Error::Invalid(format!(
            "context length {ctx} exceeds a model's n_ctx ({} / {})",
            ca.n_ctx, cb.n_ctx
        )));
    }
    let (n_a, n_b) = (ca.n_neurons(), cb.n_neurons());
    let mut corr = CorrState::new(n_a, n_b).with_tile_size(opts.tile_size);
    let mut baseline = CorrState::new(n_a, n_b).with_tile_size(opts.tile_size);
    let windows = tokens.stream.windows();
    // A model compared with itself only needs one forward pass per window.
    let same = std::ptr::eq(reference, comparison);

    for chunk in windows.chunks(opts.batch_windows.max(1)) {
        let acts = chunk
            .par_iter()
            .map(|w| -> Result<(Array2<f64>, Array2<f64>)> {
                let mask = tokens.window_mask(w);
                let a = reference.neuron_activations(w.tokens, NeuronSide::Post, &[])?;
                let a = select_rows_f64(a.view(), Some(mask));
                let b = if same {
                    a.clone()
                } else {
                    let b = comparison.neuron_activations(w.tokens, NeuronSide::Post, &[])?;
                    select_rows_f64(b.view(), Some(mask))
                };
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let a_views: Vec<_> = acts.iter().map(|(a, _)| a.view()).collect();
        let b_views: Vec<_> = acts.iter().map(|(_, b)| b.view()).collect();
        let a = concatenate(Axis(0), &a_views).expect("equal widths");
        let b = concatenate(Axis(0), &b_views).expect("equal widths");
        let rotated = rotation.rotate(b.view())?;
        corr.update_f64(a.view(), b.view())?;
        baseline.update_f64(a.view(), rotated.view())?;
    }

    Ok(CorrelationRun {
        corr,
        baseline,
        total_tokens: tokens.stream.total_tokens(),
        valid_tokens: tokens.valid_count(),
        windows: windows.len(),
    })
}
