use rayon::prelude::*;

use super::moments::MomentBank;
use crate::error::{Error, Result};
use crate::model::{ModelWeights, NeuronSide};
use crate::tensor_io::MaskedTokens;

/// Pre-activation moments of every neuron over the masked-in tokens.
///
/// Windows are evaluated in parallel in groups of `batch_windows`; the
/// per-window banks are merged in window order so results do not depend on
/// the worker count.
pub fn activation_moments(
    model: &ModelWeights,
    tokens: &MaskedTokens,
    batch_windows: usize,
) -> Result<MomentBank> {
    let ctx = tokens.stream.context_length as usize;
    if ctx > model.config.n_ctx {
        return Err(Error::Invalid(format!(
            "context length {ctx} exceeds n_ctx {}",
            model.config.n_ctx
        )));
    }
    let n = model.config.n_neurons();
    let mut bank = MomentBank::new(n);
    let windows = tokens.stream.windows();
    for chunk in windows.chunks(batch_windows.max(1)) {
        let banks = chunk
            .par_iter()
            .map(|w| -> Result<MomentBank> {
                let acts = model.neuron_activations(w.tokens, NeuronSide::Pre, &[])?;
                let mut b = MomentBank::new(n);
                b.update(acts.view(), Some(tokens.window_mask(w)))?;
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        for b in &banks {
            bank.merge(b)?;
        }
    }
    Ok(bank)
}
