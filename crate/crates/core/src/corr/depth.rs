use ndarray::Array2;

use super::UniversalityRecord;
use crate::error::{Error, Result};

/// Maps flat neuron indices to layers (`d_mlp` neurons per layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerMap {
    pub n_layer: usize,
    pub d_mlp: usize,
}

impl LayerMap {
    pub fn new(n_layer: usize, d_mlp: usize) -> Self {
        Self { n_layer, d_mlp }
    }

    pub fn layer_of(&self, flat: usize) -> usize {
        flat / self.d_mlp
    }
}

/// `P[l][l']`: fraction of reference layer-`l` neurons whose best match sits
/// in comparison layer `l'`, averaged over comparison models.
///
/// Neurons without a defined match are left out of their row; a row with no
/// defined matches at all stays zero.
pub fn depth_specialization(
    records: &[UniversalityRecord],
    reference: LayerMap,
    comparison: LayerMap,
) -> Result<Array2<f64>> {
    let n_models = records.first().map_or(0, |r| r.argmax.len());
    let mut p = Array2::<f64>::zeros((reference.n_layer, comparison.n_layer));
    if n_models == 0 {
        return Ok(p);
    }
    let mut rows_seen = vec![0usize; reference.n_layer];
    for m in 0..n_models {
        let mut counts = Array2::<f64>::zeros((reference.n_layer, comparison.n_layer));
        for r in records {
            let l = reference.layer_of(r.neuron);
            if l >= reference.n_layer {
                return Err(Error::OutOfBounds(format!("reference neuron {}", r.neuron)));
            }
            let Some(&Some(j)) = r.argmax.get(m) else { continue };
            let lp = comparison.layer_of(j);
            if lp >= comparison.n_layer {
                return Err(Error::OutOfBounds(format!("comparison neuron {j}")));
            }
            counts[[l, lp]] += 1.0;
        }
        for (l, mut row) in counts.outer_iter_mut().enumerate() {
            let total = row.sum();
            if total > 0.0 {
                row /= total;
                rows_seen[l] += 1;
                p.row_mut(l).scaled_add(1.0, &row);
            }
        }
    }
    for (l, &seen) in rows_seen.iter().enumerate() {
        if seen > 0 {
            p.row_mut(l).mapv_inplace(|x| x / seen as f64);
        }
    }
    Ok(p)
}
