//! Weight preprocessing that removes parameterization freedom without changing
//! next-token probabilities.
//!
//! * Layer-norm gains and biases are folded into the reading matrices that
//!   follow each norm, which are then mean-centered over `d_model` (the norm
//!   output has zero mean, so that component is never read).
//! * Writing matrices and biases are mean-centered over `d_model` (every read
//!   goes through a norm that subtracts the mean).
//! * The unembedding is centered over the vocabulary (softmax ignores a
//!   constant shift of every logit).

use ndarray::{Array1, Array2, Array3, ArrayViewMut1, Axis};

use super::{LayerNormParams, ModelWeights};
use crate::error::Result;

fn center(mut v: ArrayViewMut1<'_, f32>) {
    let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64;
    v.mapv_inplace(|x| (f64::from(x) - mean) as f32);
}

/// Folds a norm into `[head, d_model, d_head]` reading matrices.
fn fold_into_heads(ln: &LayerNormParams, w: &mut Array3<f32>, b: &mut Array2<f32>) {
    for (mut w_h, mut b_h) in w.outer_iter_mut().zip(b.outer_iter_mut()) {
        b_h += &ln.b.dot(&w_h);
        for (mut row, &g) in w_h.outer_iter_mut().zip(ln.w.iter()) {
            row *= g;
        }
        for col in w_h.axis_iter_mut(Axis(1)) {
            center(col);
        }
    }
}

/// Folds a norm into `[out, d_model]` reading matrices.
fn fold_into_rows(ln: &LayerNormParams, w: &mut Array2<f32>, b: &mut Array1<f32>) {
    *b += &w.dot(&ln.b);
    for mut row in w.outer_iter_mut() {
        row *= &ln.w;
        center(row);
    }
}

/// Folds every norm's gain and bias into the following reading weights and
/// centers those weights. Forward outputs are unchanged up to rounding.
pub fn fold_layer_norm(w: &ModelWeights) -> Result<ModelWeights> {
    w.validate()?;
    let mut out = w.clone();
    let d_model = w.config.d_model;
    for block in &mut out.blocks {
        let ln1 = std::mem::replace(&mut block.ln1, LayerNormParams::identity(d_model));
        let a = &mut block.attn;
        fold_into_heads(&ln1, &mut a.w_q, &mut a.b_q);
        fold_into_heads(&ln1, &mut a.w_k, &mut a.b_k);
        fold_into_heads(&ln1, &mut a.w_v, &mut a.b_v);

        let ln2 = std::mem::replace(&mut block.ln2, LayerNormParams::identity(d_model));
        fold_into_rows(&ln2, &mut block.mlp.w_in, &mut block.mlp.b_in);
    }
    let lnf = std::mem::replace(&mut out.ln_final, LayerNormParams::identity(d_model));
    out.b_u += &lnf.b.dot(&out.w_u);
    for (mut row, &g) in out.w_u.outer_iter_mut().zip(lnf.w.iter()) {
        row *= g;
    }
    for col in out.w_u.axis_iter_mut(Axis(1)) {
        center(col);
    }
    Ok(out)
}

/// Centers every residual-writing weight over `d_model` and the unembedding
/// over the vocabulary.
pub fn center_writing_and_unembed(w: &ModelWeights) -> Result<ModelWeights> {
    w.validate()?;
    let mut out = w.clone();
    for row in out.w_e.outer_iter_mut() {
        center(row);
    }
    for row in out.w_pos.outer_iter_mut() {
        center(row);
    }
    for block in &mut out.blocks {
        for mut w_h in block.attn.w_o.outer_iter_mut() {
            for row in w_h.outer_iter_mut() {
                center(row);
            }
        }
        center(block.attn.b_o.view_mut());
        for row in block.mlp.w_out.outer_iter_mut() {
            center(row);
        }
        center(block.mlp.b_out.view_mut());
    }
    for row in out.w_u.outer_iter_mut() {
        center(row);
    }
    center(out.b_u.view_mut());
    Ok(out)
}

/// Both steps, marking the result as preprocessed. Already preprocessed
/// weights are returned unchanged.
pub fn preprocess(w: &ModelWeights) -> Result<ModelWeights> {
    if w.config.preprocessed {
        return Ok(w.clone());
    }
    let mut out = center_writing_and_unembed(&fold_layer_norm(w)?)?;
    out.config.preprocessed = true;
    Ok(out)
}
