use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::moments::vector_moments;
use crate::ids::NeuronId;
use crate::model::ModelWeights;

/// Rows of `W_out` multiplied against `W_U` per step; bounds peak memory to
/// `CHUNK × d_vocab` floats.
const CHUNK: usize = 256;

/// Static per-neuron weight metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSummary {
    pub neuron: NeuronId,
    pub b_in: f64,
    pub w_in_norm: f64,
    pub w_out_norm: f64,
    /// NaN when either vector has zero norm.
    pub cos_in_out: f64,
    /// `‖w_in‖² + ‖w_out‖²`.
    pub weight_penalty: f64,
    /// Moments of `cos(w_out, W_U[:, v])` over the vocabulary.
    pub vocab_var: f64,
    pub vocab_skew: f64,
    pub vocab_kurt: f64,
    /// Moments of the direct logit effect `W_U^T w_out`.
    pub logit_var: f64,
    pub logit_skew: f64,
    pub logit_kurt: f64,
}

pub fn norm(v: ArrayView1<'_, f32>) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

/// Cosine similarity in f64, NaN if either side is zero.
pub fn cosine(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// L2 norm of each unembedding column.
pub fn unembed_column_norms(w: &ModelWeights) -> Array1<f64> {
    w.w_u.axis_iter(Axis(1)).map(norm).collect()
}

/// Calls `f(index, logit_effect, cosine)` for every neuron of `layer`, where
/// `logit_effect = W_U^T w_out` and `cosine` divides by both norms.
pub fn for_each_vocab_effect<F>(w: &ModelWeights, layer: usize, col_norms: &Array1<f64>, mut f: F)
where
    F: FnMut(usize, &[f64], &[f64]),
{
    let w_out = &w.blocks[layer].mlp.w_out;
    for start in (0..w_out.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(w_out.nrows());
        let rows = w_out.slice(s![start..end, ..]);
        let effects: Array2<f32> = rows.dot(&w.w_u);
        for (k, eff) in effects.outer_iter().enumerate() {
            let j = start + k;
            let out_norm = norm(w_out.row(j));
            let logit: Vec<f64> = eff.iter().map(|&x| f64::from(x)).collect();
            let cos: Vec<f64> = logit
                .iter()
                .zip(col_norms)
                .map(|(&e, &cn)| {
                    if out_norm == 0.0 || cn == 0.0 {
                        f64::NAN
                    } else {
                        (e / (out_norm * cn)).clamp(-1.0, 1.0)
                    }
                })
                .collect();
            f(j, &logit, &cos);
        }
    }
}

/// Static metrics for all neurons, layer-major.
pub fn weight_summaries(w: &ModelWeights) -> Vec<WeightSummary> {
    let col_norms = unembed_column_norms(w);
    let per_layer: Vec<Vec<WeightSummary>> = (0..w.config.n_layer)
        .into_par_iter()
        .map(|l| {
            let mlp = &w.blocks[l].mlp;
            let mut out = Vec::with_capacity(w.config.d_mlp);
            for_each_vocab_effect(w, l, &col_norms, |j, logit, cos| {
                let (w_in, w_out) = (mlp.w_in.row(j), mlp.w_out.row(j));
                let (ni, no) = (norm(w_in), norm(w_out));
                let lm = vector_moments(logit);
                let cm = if cos.iter().any(|c| c.is_nan()) {
                    None
                } else {
                    Some(vector_moments(cos))
                };
                out.push(WeightSummary {
                    neuron: NeuronId::new(l, j),
                    b_in: f64::from(mlp.b_in[j]),
                    w_in_norm: ni,
                    w_out_norm: no,
                    cos_in_out: cosine(w_in, w_out),
                    weight_penalty: ni * ni + no * no,
                    vocab_var: cm.map_or(f64::NAN, |m| m.variance),
                    vocab_skew: cm.map_or(f64::NAN, |m| m.skew),
                    vocab_kurt: cm.map_or(f64::NAN, |m| m.kurtosis),
                    logit_var: lm.variance,
                    logit_skew: lm.skew,
                    logit_kurt: lm.kurtosis,
                });
            });
            out
        })
        .collect();
    per_layer.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preprocess;
    use crate::synth;

    #[test]
    fn identical_and_orthogonal_vectors() {
        let cfg = synth::config(1, 1, 8, 4, 10, 8);
        let mut w = synth::random_model(&cfg, 3);
        let mlp = &mut w.blocks[0].mlp;
        let v = mlp.w_in.row(0).to_owned();
        mlp.w_out.row_mut(0).assign(&v);
        mlp.w_in.row_mut(1).assign(&ndarray::arr1(&[1.0, 0., 0., 0., 0., 0., 0., 0.]));
        mlp.w_out.row_mut(1).assign(&ndarray::arr1(&[0.0, 3., 0., 0., 0., 0., 0., 0.]));
        mlp.w_out.row_mut(2).fill(0.0);
        let s = weight_summaries(&w);
        assert!((s[0].cos_in_out - 1.0).abs() < 1e-6);
        assert!(s[1].cos_in_out.abs() < 1e-6);
        assert!((s[1].weight_penalty - 10.0).abs() < 1e-9);
        assert!(s[2].cos_in_out.is_nan());
        assert!(s[2].vocab_kurt.is_nan());
    }

    #[test]
    fn matches_dense_recompute() {
        let cfg = synth::config(2, 2, 16, 40, 300, 8);
        let w = preprocess(&synth::random_model(&cfg, 9)).unwrap();
        let s = weight_summaries(&w);
        assert_eq!(s.len(), 80);
        for rec in &s {
            let mlp = &w.blocks[rec.neuron.layer].mlp;
            let j = rec.neuron.index;
            let wi: Vec<f64> = mlp.w_in.row(j).iter().map(|&x| x as f64).collect();
            let wo: Vec<f64> = mlp.w_out.row(j).iter().map(|&x| x as f64).collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let cos = dot(&wi, &wo) / (dot(&wi, &wi) * dot(&wo, &wo)).sqrt();
            assert!((rec.cos_in_out - cos).abs() < 1e-6);
            assert!((rec.weight_penalty - dot(&wi, &wi) - dot(&wo, &wo)).abs() < 1e-6 * rec.weight_penalty);
            let cosines: Vec<f64> = (0..cfg.d_vocab)
                .map(|v| {
                    let u: Vec<f64> = w.w_u.column(v).iter().map(|&x| x as f64).collect();
                    dot(&wo, &u) / (dot(&wo, &wo) * dot(&u, &u)).sqrt()
                })
                .collect();
            let m = vector_moments(&cosines);
            assert!((rec.vocab_var - m.variance).abs() < 1e-6 * m.variance.max(1e-3));
            assert!((rec.vocab_kurt - m.kurtosis).abs() < 1e-4);
            assert!(rec.vocab_kurt >= rec.vocab_skew.powi(2) + 1.0 - 1e-9);
        }
    }
}
