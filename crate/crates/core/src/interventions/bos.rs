use ndarray::{Array1, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::{HeadId, NeuronId};
use crate::model::{layer_norm_row, HookPoint, HookSet, Intervention, ModelWeights, Positions};
use crate::synth::{gaussian, rng};
use crate::tensor_io::MaskedTokens;

fn check_head(model: &ModelWeights, head: HeadId) -> Result<()> {
    let c = &model.config;
    if head.layer >= c.n_layer || head.head >= c.n_head {
        return Err(Error::OutOfBounds(format!("head {head} outside the model")));
    }
    Ok(())
}

fn check_neuron(model: &ModelWeights, n: NeuronId) -> Result<()> {
    let c = &model.config;
    if n.layer >= c.n_layer || n.index >= c.d_mlp {
        return Err(Error::OutOfBounds(format!("neuron {n} outside the model")));
    }
    Ok(())
}

/// Layer inputs of an isolated one-token BOS context, one per layer.
fn bos_residuals(model: &ModelWeights, bos: u32) -> Result<Vec<Array1<f32>>> {
    let hooks: HookSet = (0..model.config.n_layer).map(HookPoint::ResidPre).collect();
    let trace = model.activations(&[bos], &hooks, &[])?;
    (0..model.config.n_layer)
        .map(|l| {
            let r = trace.require(HookPoint::ResidPre(l))?;
            Ok(r.index_axis(Axis(0), 0).iter().copied().collect())
        })
        .collect()
}

/// `k_BOS` of a head: its key for BOS alone at position 0. BOS keys are the
/// same in every prompt because causal attention at position 0 sees nothing
/// else.
pub fn bos_key(model: &ModelWeights, head: HeadId, bos: u32) -> Result<Array1<f32>> {
    check_head(model, head)?;
    let resid = bos_residuals(model, bos)?;
    Ok(key_from_resid(model, head, &resid[head.layer]))
}

fn key_from_resid(model: &ModelWeights, head: HeadId, resid: &Array1<f32>) -> Array1<f32> {
    let attn = &model.blocks[head.layer].attn;
    let (normed, _) = layer_norm_row(resid.view(), &model.blocks[head.layer].ln1, model.config.ln_eps);
    normed.dot(&attn.w_k.index_axis(Axis(0), head.head)) + attn.b_k.row(head.head)
}

/// `W_Q k_BOS`: the residual direction whose query attends most to BOS.
pub fn bos_query_direction(model: &ModelWeights, head: HeadId, bos: u32) -> Result<Array1<f64>> {
    let k = bos_key(model, head, bos)?;
    Ok(query_direction(model, head, &k))
}

fn query_direction(model: &ModelWeights, head: HeadId, k: &Array1<f32>) -> Array1<f64> {
    let w_q = model.blocks[head.layer].attn.w_q.index_axis(Axis(0), head.head);
    w_q.outer_iter()
        .map(|row| row.iter().zip(k).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum())
        .collect()
}

fn unit_dot(v: ndarray::ArrayView1<'_, f32>, dir: &Array1<f64>) -> f64 {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v.iter().zip(dir).map(|(&a, b)| f64::from(a) * b).sum::<f64>() / norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BosScore {
    pub neuron: NeuronId,
    pub head: HeadId,
    /// `ŵ_out · W_Q k_BOS`; zero for a neuron with no output weights.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadBaseline {
    pub head: HeadId,
    /// Scores of random zero-mean unit directions against the same head.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BosScoreTable {
    pub bos_token: u32,
    pub scores: Vec<BosScore>,
    pub baselines: Vec<HeadBaseline>,
}

/// h_n scores of every upstream neuron against `heads`, with `n_baseline`
/// random directions per head drawn from `seed`.
pub fn bos_scores_for_heads(
    model: &ModelWeights,
    heads: &[HeadId],
    bos: u32,
    n_baseline: usize,
    seed: u64,
) -> Result<BosScoreTable> {
    for &h in heads {
        check_head(model, h)?;
    }
    let c = &model.config;
    let resid = bos_residuals(model, bos)?;
    let mut r = rng(seed);
    let mut scores = Vec::new();
    let mut baselines = Vec::new();
    for &head in heads {
        let dir = query_direction(model, head, &key_from_resid(model, head, &resid[head.layer]));
        for l in 0..head.layer {
            for (j, row) in model.blocks[l].mlp.w_out.outer_iter().enumerate() {
                scores.push(BosScore {
                    neuron: NeuronId::new(l, j),
                    head,
                    score: unit_dot(row, &dir),
                });
            }
        }
        let base = (0..n_baseline)
            .map(|_| {
                let g: Array1<f32> = gaussian(&mut r, c.d_model, 1.0);
                let mean = g.mean().unwrap_or(0.0);
                unit_dot(g.mapv(|x| x - mean).view(), &dir)
            })
            .collect();
        baselines.push(HeadBaseline { head, scores: base });
    }
    Ok(BosScoreTable {
        bos_token: bos,
        scores,
        baselines,
    })
}

/// h_n scores for every (neuron, head) pair with the neuron upstream.
pub fn bos_heuristic_scores(model: &ModelWeights, bos: u32, n_baseline: usize, seed: u64) -> Result<BosScoreTable> {
    let c = &model.config;
    let heads: Vec<HeadId> = (1..c.n_layer)
        .flat_map(|l| (0..c.n_head).map(move |h| HeadId::new(l, h)))
        .collect();
    bos_scores_for_heads(model, &heads, bos, n_baseline, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeadValueRatio {
    pub head: HeadId,
    pub bos_norm: f64,
    pub mean_other_norm: f64,
    /// `mean_other_norm / bos_norm`; `None` when the BOS value vanishes.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueNormReport {
    pub bos_token: u32,
    pub heads: Vec<HeadValueRatio>,
    /// Median over heads, a vanished BOS value counting as infinite; `None`
    /// when the median itself is infinite.
    pub median: Option<f64>,
    pub tokens: usize,
}

/// Per head: the mean `‖W_O v_s‖` over masked-in stream tokens against the
/// BOS value norm taken from the isolated BOS context.
pub fn bos_value_norm_ratio(model: &ModelWeights, tokens: &MaskedTokens, bos: u32) -> Result<ValueNormReport> {
    let c = &model.config;
    let value_hooks: HookSet = (0..c.n_layer).map(HookPoint::Value).collect();
    let head_norms = |trace: &crate::model::HookTrace, l: usize, pos: usize| -> Result<Vec<f64>> {
        let v = trace.require(HookPoint::Value(l))?;
        Ok((0..c.n_head)
            .map(|h| {
                let vh: Array1<f32> = v.index_axis(Axis(0), h).index_axis(Axis(0), pos).iter().copied().collect();
                let o = vh.dot(&model.blocks[l].attn.w_o.index_axis(Axis(0), h));
                o.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
            })
            .collect())
    };
    let bos_trace = model.activations(&[bos], &value_hooks, &[])?;
    let mut bos_norms = Vec::with_capacity(c.n_layer);
    for l in 0..c.n_layer {
        bos_norms.push(head_norms(&bos_trace, l, 0)?);
    }

    let windows = tokens.stream.windows();
    let per_window = windows
        .par_iter()
        .map(|w| -> Result<(Vec<f64>, usize)> {
            let trace = model.activations(w.tokens, &value_hooks, &[])?;
            let mask = tokens.window_mask(w);
            let mut sums = vec![0.0; c.n_layer * c.n_head];
            let mut n = 0;
            for pos in (0..w.tokens.len()).filter(|&i| mask[i]) {
                n += 1;
                for l in 0..c.n_layer {
                    for (h, x) in head_norms(&trace, l, pos)?.into_iter().enumerate() {
                        sums[l * c.n_head + h] += x;
                    }
                }
            }
            Ok((sums, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; c.n_layer * c.n_head];
    let mut n = 0;
    for (s, k) in &per_window {
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        n += k;
    }
    if n == 0 {
        return Err(Error::Invalid("no masked-in tokens to average value norms over".into()));
    }
    let mut heads = Vec::new();
    for l in 0..c.n_layer {
        for h in 0..c.n_head {
            let mean_other = sums[l * c.n_head + h] / n as f64;
            let bos_norm = bos_norms[l][h];
            let ratio = (bos_norm > 1e-12 * mean_other.max(1e-30)).then(|| mean_other / bos_norm);
            heads.push(HeadValueRatio {
                head: HeadId::new(l, h),
                bos_norm,
                mean_other_norm: mean_other,
                ratio,
            });
        }
    }
    let mut sorted: Vec<f64> = heads.iter().map(|h| h.ratio.unwrap_or(f64::INFINITY)).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    };
    Ok(ValueNormReport {
        bos_token: bos,
        heads,
        median: median.is_finite().then_some(median),
        tokens: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationSample {
    pub window: usize,
    pub position: usize,
    /// The neuron's post-activation at this position.
    pub activation: f64,
    pub bos_attn_clean: f64,
    pub bos_attn_ablated: f64,
    pub delta_bos_attn: f64,
    pub out_norm_clean: f64,
    pub out_norm_ablated: f64,
    pub delta_out_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathAblationResult {
    pub neuron: NeuronId,
    pub head: HeadId,
    pub samples: Vec<AblationSample>,
    pub mean_delta_bos_attn: f64,
    pub mean_delta_out_norm: f64,
    /// Fractions over samples with a positive activation.
    pub positive_samples: usize,
    pub frac_bos_decrease: f64,
    pub frac_norm_increase: f64,
}

/// Removes `neuron`'s contribution from `head`'s query input at sampled
/// destinations in the second half of each window and measures the head's
/// attention to position 0 and its output norm, clean against ablated.
pub fn path_ablation(
    model: &ModelWeights,
    tokens: &MaskedTokens,
    neuron: NeuronId,
    head: HeadId,
    n_samples: usize,
    seed: u64,
) -> Result<PathAblationResult> {
    check_neuron(model, neuron)?;
    check_head(model, head)?;
    if neuron.layer >= head.layer {
        return Err(Error::Invalid(format!("neuron {neuron} does not feed head {head}")));
    }
    if n_samples == 0 {
        return Err(Error::Invalid("sample size must be positive".into()));
    }
    let ctx = tokens.stream.context_length as usize;
    let windows = tokens.stream.windows();
    let mut candidates = Vec::new();
    for (wi, w) in windows.iter().enumerate() {
        let mask = tokens.window_mask(w);
        let first = (ctx / 2).max(1);
        for (pos, &keep) in mask.iter().enumerate().take(w.tokens.len()).skip(first) {
            if keep {
                candidates.push((wi, pos));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Invalid("no masked-in destinations in the second half of any window".into()));
    }
    let k = n_samples.min(candidates.len());
    let mut picked: Vec<(usize, usize)> = sample(&mut rng(seed), candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort();
    let mut by_window: Vec<(usize, Vec<usize>)> = Vec::new();
    for (wi, pos) in picked {
        match by_window.last_mut() {
            Some((w, v)) if *w == wi => v.push(pos),
            _ => by_window.push((wi, vec![pos])),
        }
    }

    let hooks = HookSet::new()
        .with(HookPoint::AttnPattern(head.layer))
        .with(HookPoint::HeadOut(head.layer))
        .with(HookPoint::MlpPost(neuron.layer));
    let per_window = by_window
        .par_iter()
        .map(|(wi, positions)| -> Result<Vec<AblationSample>> {
            let t = windows[*wi].tokens;
            let clean = model.activations(t, &hooks, &[])?;
            let iv = Intervention::PathAblate {
                source: neuron,
                target: head,
                positions: Positions::At(positions.clone()),
            };
            let ablated = model.activations(t, &hooks, &[iv])?;
            let pattern = |tr: &crate::model::HookTrace, d: usize| -> Result<f64> {
                Ok(f64::from(tr.require(HookPoint::AttnPattern(head.layer))?[[head.head, d, 0]]))
            };
            let out_norm = |tr: &crate::model::HookTrace, d: usize| -> Result<f64> {
                let o = tr.require(HookPoint::HeadOut(head.layer))?;
                Ok(o.index_axis(Axis(0), head.head)
                    .index_axis(Axis(0), d)
                    .iter()
                    .map(|&x| f64::from(x).powi(2))
                    .sum::<f64>()
                    .sqrt())
            };
            let post = clean.require(HookPoint::MlpPost(neuron.layer))?;
            positions
                .iter()
                .map(|&d| {
                    let (bc, ba) = (pattern(&clean, d)?, pattern(&ablated, d)?);
                    let (nc, na) = (out_norm(&clean, d)?, out_norm(&ablated, d)?);
                    Ok(AblationSample {
                        window: *wi,
                        position: d,
                        activation: f64::from(post[[d, neuron.index]]),
                        bos_attn_clean: bc,
                        bos_attn_ablated: ba,
                        delta_bos_attn: ba - bc,
                        out_norm_clean: nc,
                        out_norm_ablated: na,
                        delta_out_norm: na - nc,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<AblationSample> = per_window.into_iter().flatten().collect();
    let n = samples.len() as f64;
    let positive: Vec<&AblationSample> = samples.iter().filter(|s| s.activation > 0.0).collect();
    let frac = |f: fn(&AblationSample) -> bool| {
        if positive.is_empty() {
            f64::NAN
        } else {
            positive.iter().filter(|s| f(s)).count() as f64 / positive.len() as f64
        }
    };
    Ok(PathAblationResult {
        neuron,
        head,
        mean_delta_bos_attn: samples.iter().map(|s| s.delta_bos_attn).sum::<f64>() / n,
        mean_delta_out_norm: samples.iter().map(|s| s.delta_out_norm).sum::<f64>() / n,
        positive_samples: positive.len(),
        frac_bos_decrease: frac(|s| s.delta_bos_attn < 0.0),
        frac_norm_increase: frac(|s| s.delta_out_norm > 0.0),
        samples,
    })
}
