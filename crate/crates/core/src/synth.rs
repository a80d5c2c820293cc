//! Synthetic models and token streams for tests, acceptance runs and demos.
//!
//! Random models are unfolded and uncentered on purpose, with non-trivial
//! layer-norm parameters, so preprocessing has something to fold.

use ndarray::{Array, Array1, Array2, Array3, Dimension, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{
    Activation, AttentionWeights, Block, LayerNormParams, MlpWeights, ModelConfig, ModelWeights,
};
use crate::tensor_io::TokenStream;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<Sh, D>(rng: &mut impl Rng, shape: Sh, std: f32) -> Array<f32, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
{
    Array::from_shape_simple_fn(shape, || {
        let z: f32 = StandardNormal.sample(rng);
        z * std
    })
}

pub fn config(
    n_layer: usize,
    n_head: usize,
    d_model: usize,
    d_mlp: usize,
    d_vocab: usize,
    n_ctx: usize,
) -> ModelConfig {
    ModelConfig {
        n_layer,
        n_head,
        d_model,
        d_mlp,
        d_vocab,
        n_ctx,
        ln_eps: 1e-5,
        activation: Activation::GeluTanhApprox,
        tied_embeddings: false,
        preprocessed: false,
    }
}

fn random_ln(rng: &mut impl Rng, d: usize) -> LayerNormParams {
    LayerNormParams {
        w: gaussian::<_, ndarray::Ix1>(rng, d, 0.2).mapv(|x| 1.0 + x),
        b: gaussian(rng, d, 0.1),
    }
}

/// Gaussian weights with roughly unit-scale activations.
pub fn random_model(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut r = rng(seed);
    let (dm, dh, nh) = (cfg.d_model, cfg.d_head(), cfg.n_head);
    let read = 1.0 / (dm as f32).sqrt();
    let blocks = (0..cfg.n_layer)
        .map(|_| Block {
            ln1: random_ln(&mut r, dm),
            attn: AttentionWeights {
                w_q: gaussian(&mut r, (nh, dm, dh), read * 2.0),
                b_q: gaussian(&mut r, (nh, dh), 0.1),
                w_k: gaussian(&mut r, (nh, dm, dh), read * 2.0),
                b_k: gaussian(&mut r, (nh, dh), 0.1),
                w_v: gaussian(&mut r, (nh, dm, dh), read),
                b_v: gaussian(&mut r, (nh, dh), 0.1),
                w_o: gaussian(&mut r, (nh, dh, dm), 1.0 / (dh as f32).sqrt()),
                b_o: gaussian(&mut r, dm, 0.1),
            },
            ln2: random_ln(&mut r, dm),
            mlp: MlpWeights {
                w_in: gaussian(&mut r, (cfg.d_mlp, dm), read),
                b_in: gaussian(&mut r, cfg.d_mlp, 0.5),
                w_out: gaussian(&mut r, (cfg.d_mlp, dm), 1.0 / (cfg.d_mlp as f32).sqrt()),
                b_out: gaussian(&mut r, dm, 0.1),
            },
        })
        .collect();
    ModelWeights {
        config: cfg.clone(),
        w_e: gaussian(&mut r, (cfg.d_vocab, dm), 1.0),
        w_pos: gaussian(&mut r, (cfg.n_ctx, dm), 0.3),
        blocks,
        ln_final: random_ln(&mut r, dm),
        w_u: gaussian(&mut r, (dm, cfg.d_vocab), read * 3.0),
        b_u: gaussian(&mut r, cfg.d_vocab, 0.1),
    }
}

/// Uniform random documents of `doc_len` tokens. When `bos` is given, every
/// document starts with it and the other tokens avoid it.
pub fn random_tokens(
    n_docs: usize,
    doc_len: usize,
    d_vocab: u32,
    context_length: u32,
    bos: Option<u32>,
    seed: u64,
) -> TokenStream {
    let mut r = rng(seed);
    let documents = (0..n_docs)
        .map(|_| {
            let mut doc = Vec::with_capacity(doc_len);
            if let Some(b) = bos {
                doc.push(b);
            }
            while doc.len() < doc_len {
                let t = r.random_range(0..d_vocab);
                if Some(t) != bos {
                    doc.push(t);
                }
            }
            doc
        })
        .collect();
    TokenStream::new(context_length, documents).expect("positive context length")
}

fn zero_block(cfg: &ModelConfig) -> Block {
    let (dm, dh, nh) = (cfg.d_model, cfg.d_head(), cfg.n_head);
    Block {
        ln1: LayerNormParams::identity(dm),
        attn: AttentionWeights {
            w_q: Array3::zeros((nh, dm, dh)),
            b_q: Array2::zeros((nh, dh)),
            w_k: Array3::zeros((nh, dm, dh)),
            b_k: Array2::zeros((nh, dh)),
            w_v: Array3::zeros((nh, dm, dh)),
            b_v: Array2::zeros((nh, dh)),
            w_o: Array3::zeros((nh, dh, dm)),
            b_o: Array1::zeros(dm),
        },
        ln2: LayerNormParams::identity(dm),
        mlp: MlpWeights {
            w_in: Array2::zeros((cfg.d_mlp, dm)),
            b_in: Array1::zeros(cfg.d_mlp),
            w_out: Array2::zeros((cfg.d_mlp, dm)),
            b_out: Array1::zeros(dm),
        },
    }
}

/// A model whose blocks are all zero. Embeddings and unembedding are zero too.
pub fn zero_model(cfg: &ModelConfig) -> ModelWeights {
    ModelWeights {
        config: cfg.clone(),
        w_e: Array2::zeros((cfg.d_vocab, cfg.d_model)),
        w_pos: Array2::zeros((cfg.n_ctx, cfg.d_model)),
        blocks: (0..cfg.n_layer).map(|_| zero_block(cfg)).collect(),
        ln_final: LayerNormParams::identity(cfg.d_model),
        w_u: Array2::zeros((cfg.d_model, cfg.d_vocab)),
        b_u: Array1::zeros(cfg.d_vocab),
    }
}

/// A single-block model of one-hot unigram detectors.
///
/// Embeddings are one-hot (`d_model == d_vocab`), attention and MLP writes are
/// zero, and neuron `j` of the block fires (pre-activation about +7.9) exactly
/// when the current token is `detects[j]` and sits near -8 otherwise.
pub fn unigram_detector_model(d_vocab: usize, n_ctx: usize, detects: &[u32]) -> ModelWeights {
    let mut cfg = config(1, 1, d_vocab, detects.len(), d_vocab, n_ctx);
    cfg.preprocessed = true;
    let mut w = zero_model(&cfg);
    for t in 0..d_vocab {
        w.w_e[[t, t]] = 1.0;
    }
    let mlp = &mut w.blocks[0].mlp;
    for (j, &tok) in detects.iter().enumerate() {
        let centered = -2.0 / d_vocab as f32;
        mlp.w_in.row_mut(j).fill(centered);
        mlp.w_in[[j, tok as usize]] += 2.0;
        mlp.b_in[j] = -8.0;
    }
    for v in 0..d_vocab {
        w.w_u[[v, v]] = 1.0;
    }
    w
}

/// Returns a copy of `v` projected onto the zero-mean subspace and scaled to unit norm.
pub fn centered_unit(v: &Array1<f32>) -> Array1<f32> {
    let mean = v.mean().unwrap_or(0.0);
    let c = v.mapv(|x| x - mean);
    let n = c.dot(&c).sqrt();
    c / n
}

/// Removes the component of every writer in `w` along unit vector `u`.
pub fn project_out_writes(w: &mut ModelWeights, u: &Array1<f32>, except: Option<(usize, usize)>) {
    let proj = |mut row: ndarray::ArrayViewMut1<'_, f32>| {
        let c = row.dot(u);
        row.scaled_add(-c, u);
    };
    for row in w.w_e.outer_iter_mut() {
        proj(row);
    }
    for row in w.w_pos.outer_iter_mut() {
        proj(row);
    }
    for (l, block) in w.blocks.iter_mut().enumerate() {
        for mut w_h in block.attn.w_o.outer_iter_mut() {
            for row in w_h.outer_iter_mut() {
                proj(row);
            }
        }
        proj(block.attn.b_o.view_mut());
        for (j, row) in block.mlp.w_out.outer_iter_mut().enumerate() {
            if except != Some((l, j)) {
                proj(row);
            }
        }
        proj(block.mlp.b_out.view_mut());
    }
}

/// A preprocessed random model with a planted entropy neuron.
///
/// The neuron `(n_layer - 1, 0)` writes a high-norm direction orthogonal to
/// every unembedding column, and every other writer has that direction
/// projected out. Raising its activation only inflates the final norm scale.
pub fn entropy_toy(seed: u64) -> (ModelWeights, crate::ids::NeuronId) {
    let cfg = config(2, 2, 16, 32, 12, 32);
    let mut w = crate::model::preprocess(&random_model(&cfg, seed)).expect("valid random model");
    let dm = cfg.d_model;
    // Direction living in the second half of the residual, zero-mean.
    let mut u = Array1::<f32>::zeros(dm);
    for k in dm / 2..dm {
        u[k] = if k % 2 == 0 { 1.0 } else { -1.0 };
    }
    let u = centered_unit(&u);
    for mut col in w.w_u.axis_iter_mut(ndarray::Axis(1)) {
        let c = col.dot(&u);
        col.scaled_add(-c, &u);
    }
    project_out_writes(&mut w, &u, Some((cfg.n_layer - 1, 0)));
    let last = cfg.n_layer - 1;
    w.blocks[last].mlp.w_out.row_mut(0).assign(&(&u * 12.0));
    // Without an unembedding bias the neuron can only rescale the logits.
    w.b_u.fill(0.0);
    (w, crate::ids::NeuronId::new(last, 0))
}

/// Planted attention-deactivation circuit.
///
/// Returned ids: the gating neuron, the gated head and the BOS token.
///
/// * Layer-0 neuron 0 is always on (`b_in = 3`) and writes along a direction
///   `q` that head `(1, 0)` reads as a query aligned with the BOS key.
/// * The BOS token embeds (at position 0) purely along a direction `b`;
///   the head's keys read `b` and its values project out both `b` and `q`,
///   so the BOS value is zero.
///
/// With the neuron present the head parks almost all attention on BOS.
/// Removing its contribution from the query side should spread attention and
/// grow the head output.
pub fn bos_toy(seed: u64) -> (ModelWeights, crate::ids::NeuronId, crate::ids::HeadId, u32) {
    let mut cfg = config(2, 2, 16, 8, 24, 32);
    cfg.preprocessed = true;
    let (dm, dh) = (cfg.d_model, cfg.d_head());
    let mut r = rng(seed);
    let mut w = zero_model(&cfg);
    let basis = |k: usize| {
        let mut v = Array1::<f32>::zeros(dm);
        v[2 * k] = 1.0;
        v[2 * k + 1] = -1.0;
        v / 2f32.sqrt()
    };
    let (q_dir, b_dir) = (basis(0), basis(1));
    let strip = |mut row: ndarray::ArrayViewMut1<'_, f32>| {
        let mean = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|x| x - mean);
        for d in [&q_dir, &b_dir] {
            let c = row.dot(d);
            row.scaled_add(-c, d);
        }
    };
    w.w_e = gaussian(&mut r, (cfg.d_vocab, dm), 1.0);
    w.w_pos = gaussian(&mut r, (cfg.n_ctx, dm), 0.3);
    w.w_e.outer_iter_mut().for_each(strip);
    w.w_pos.outer_iter_mut().for_each(strip);
    let bos = 0u32;
    let bos_row = &b_dir * 4.0 - w.w_pos.row(0);
    w.w_e.row_mut(0).assign(&bos_row);

    let mlp = &mut w.blocks[0].mlp;
    mlp.b_in[0] = 3.0;
    mlp.w_out.row_mut(0).assign(&(&q_dir * 4.0));

    let attn = &mut w.blocks[1].attn;
    for h in 0..cfg.n_head {
        let mut w_v = gaussian::<_, ndarray::Ix2>(&mut r, (dm, dh), 1.0 / (dm as f32).sqrt());
        for d in [&q_dir, &b_dir] {
            // (I - d dᵀ) W_V
            let proj = d.dot(&w_v);
            for i in 0..dm {
                w_v.row_mut(i).scaled_add(-d[i], &proj);
            }
        }
        attn.w_v.index_axis_mut(ndarray::Axis(0), h).assign(&w_v);
        let mut w_o = gaussian::<_, ndarray::Ix2>(&mut r, (dh, dm), 1.0 / (dh as f32).sqrt());
        w_o.outer_iter_mut().for_each(strip);
        attn.w_o.index_axis_mut(ndarray::Axis(0), h).assign(&w_o);
    }
    for i in 0..dm {
        attn.w_q[[0, i, 0]] = 3.0 * q_dir[i];
        attn.w_k[[0, i, 0]] = 3.0 * b_dir[i];
    }
    w.w_u = gaussian(&mut r, (dm, cfg.d_vocab), 0.5);
    (
        w,
        crate::ids::NeuronId::new(0, 0),
        crate::ids::HeadId::new(1, 0),
        bos,
    )
}
