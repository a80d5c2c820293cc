use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::NeuronId;
use crate::model::{HookSet, Intervention, ModelWeights, Positions};
use crate::stats::{quantile, WeightSummary};
use crate::synth::rng;
use crate::tensor_io::MaskedTokens;

/// Eleven evenly spaced values over `[-2, 10]`.
pub fn default_grid() -> Vec<f32> {
    linspace(-2.0, 10.0, 11)
}

pub fn linspace(start: f32, stop: f32, count: usize) -> Vec<f32> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (stop - start) * i as f32 / (n - 1) as f32)
            .collect(),
    }
}

/// Position-averaged metrics of one (clean or fixed) run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    /// `None` for the clean run.
    pub value: Option<f32>,
    pub ln_scale: f64,
    pub entropy: f64,
    pub loss: f64,
    /// 1-based rank of the true next token.
    pub true_rank: f64,
    pub reciprocal_rank: f64,
    /// Mean change of the reciprocal rank against the clean run.
    pub rr_shift: f64,
    /// Fraction of positions whose argmax token differs from the clean run.
    pub argmax_changed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyExperimentResult {
    pub neuron: NeuronId,
    pub grid: Vec<f32>,
    pub clean: GridPoint,
    pub points: Vec<GridPoint>,
    /// Masked-in positions behind the norm-scale and entropy means.
    pub positions: usize,
    /// Masked-in positions with a next token, behind loss and rank means.
    pub scored_positions: usize,
}

#[derive(Debug, Clone, Default)]
struct Sums {
    ln_scale: f64,
    entropy: f64,
    loss: f64,
    rank: f64,
    rr: f64,
    rr_shift: f64,
    argmax_changed: f64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.ln_scale += o.ln_scale;
        self.entropy += o.entropy;
        self.loss += o.loss;
        self.rank += o.rank;
        self.rr += o.rr;
        self.rr_shift += o.rr_shift;
        self.argmax_changed += o.argmax_changed;
    }

    fn mean(&self, value: Option<f32>, n: usize, scored: usize) -> GridPoint {
        let (n, s) = (n.max(1) as f64, scored.max(1) as f64);
        GridPoint {
            value,
            ln_scale: self.ln_scale / n,
            entropy: self.entropy / n,
            loss: self.loss / s,
            true_rank: self.rank / s,
            reciprocal_rank: self.rr / s,
            rr_shift: self.rr_shift / s,
            argmax_changed: self.argmax_changed / n,
        }
    }
}

fn argmax(row: ndarray::ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// 1-based rank of `target`: one plus the count of strictly larger logits.
fn rank_of(row: ndarray::ArrayView1<'_, f32>, target: usize) -> usize {
    let t = row[target];
    1 + row.iter().filter(|&&x| x > t).count()
}

pub fn validate_grid(grid: &[f32]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Invalid("value grid is empty".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("value grid has non-finite entries".into()));
    }
    if grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Invalid("value grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Fixes `neuron` to each grid value at every position and records how the
/// final norm scale, entropy, loss and true-token rank respond.
pub fn entropy_intervention(
    model: &ModelWeights,
    tokens: &MaskedTokens,
    neuron: NeuronId,
    grid: &[f32],
) -> Result<EntropyExperimentResult> {
    validate_grid(grid)?;
    let c = &model.config;
    if neuron.layer >= c.n_layer || neuron.index >= c.d_mlp {
        return Err(Error::OutOfBounds(format!("neuron {neuron} outside the model")));
    }
    let windows = tokens.stream.windows();
    let per_window = windows
        .par_iter()
        .map(|w| -> Result<(Vec<Sums>, usize, usize)> {
            let mask = tokens.window_mask(w);
            let t = w.tokens;
            let clean = model.forward(t, &HookSet::new(), &[])?;
            let live: Vec<usize> = (0..t.len()).filter(|&i| mask[i]).collect();
            let scored: Vec<usize> = live.iter().copied().filter(|&i| i + 1 < t.len()).collect();
            let clean_rr: Vec<f64> = (0..t.len())
                .map(|i| {
                    if i + 1 < t.len() {
                        1.0 / rank_of(clean.logits.row(i), t[i + 1] as usize) as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            let clean_arg: Vec<usize> = clean.logits.outer_iter().map(argmax).collect();
            let mut out = Vec::with_capacity(grid.len() + 1);
            let runs = std::iter::once(None).chain(grid.iter().map(|&v| Some(v)));
            for value in runs {
                let fixed;
                let o = match value {
                    None => &clean,
                    Some(v) => {
                        let iv = Intervention::FixNeuron {
                            neuron,
                            value: v,
                            positions: Positions::All,
                        };
                        fixed = model.forward(t, &HookSet::new(), &[iv])?;
                        &fixed
                    }
                };
                let mut s = Sums::default();
                for &i in &live {
                    s.ln_scale += f64::from(o.ln_final_scale[i]);
                    s.entropy += o.entropy[i];
                    s.argmax_changed += f64::from(u8::from(argmax(o.logits.row(i)) != clean_arg[i]));
                }
                for &i in &scored {
                    let r = rank_of(o.logits.row(i), t[i + 1] as usize) as f64;
                    s.loss += o.loss[i];
                    s.rank += r;
                    s.rr += 1.0 / r;
                    s.rr_shift += 1.0 / r - clean_rr[i];
                }
                out.push(s);
            }
            Ok((out, live.len(), scored.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut totals = vec![Sums::default(); grid.len() + 1];
    let (mut n, mut scored) = (0, 0);
    for (sums, nw, sw) in &per_window {
        for (t, s) in totals.iter_mut().zip(sums) {
            t.add(s);
        }
        n += nw;
        scored += sw;
    }
    if n == 0 {
        return Err(Error::Invalid("no masked-in positions to average over".into()));
    }
    Ok(EntropyExperimentResult {
        neuron,
        grid: grid.to_vec(),
        clean: totals[0].mean(None, n, scored),
        points: grid
            .iter()
            .zip(&totals[1..])
            .map(|(&v, s)| s.mean(Some(v), n, scored))
            .collect(),
        positions: n,
        scored_positions: scored,
    })
}

/// Random control neurons from the final two layers that are neither in the
/// top decile of output-weight norm nor in the bottom decile of logit-effect
/// variance, deciles taken over that same pool. `exclude` is never drawn.
pub fn select_controls(
    summaries: &[WeightSummary],
    n_layer: usize,
    count: usize,
    seed: u64,
    exclude: &[NeuronId],
) -> Vec<NeuronId> {
    let first = n_layer.saturating_sub(2);
    let pool: Vec<&WeightSummary> = summaries.iter().filter(|s| s.neuron.layer >= first).collect();
    let norms: Vec<f64> = pool.iter().map(|s| s.w_out_norm).collect();
    let vars: Vec<f64> = pool.iter().map(|s| s.logit_var).collect();
    let (norm_cut, var_cut) = (quantile(&norms, 0.9), quantile(&vars, 0.1));
    let eligible: Vec<NeuronId> = pool
        .iter()
        .filter(|s| s.w_out_norm < norm_cut && s.logit_var > var_cut && !exclude.contains(&s.neuron))
        .map(|s| s.neuron)
        .collect();
    let k = count.min(eligible.len());
    let mut picked: Vec<NeuronId> = sample(&mut rng(seed), eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort();
    picked
}
