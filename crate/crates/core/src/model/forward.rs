use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use super::{HookPoint, HookSet, HookTrace, Intervention, LayerNormParams, ModelWeights};
use crate::error::{Error, Result};

/// Output of one forward pass over a single context window.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[T, d_vocab]`; empty (`[T, 0]`) when produced by [`ModelWeights::activations`].
    pub logits: Array2<f32>,
    pub trace: HookTrace,
    /// Next-token entropy in nats per position.
    pub entropy: Vec<f64>,
    /// Cross-entropy of the true next token; the final position has no term.
    pub loss: Vec<f64>,
    /// `sqrt(Var[x] + eps)` of the final layer norm per position.
    pub ln_final_scale: Vec<f32>,
}

/// Layer norm over the last axis; also returns the per-row scale.
pub fn layer_norm(x: ArrayView2<'_, f32>, p: &LayerNormParams, eps: f32) -> (Array2<f32>, Array1<f32>) {
    let mut out = Array2::zeros(x.raw_dim());
    let mut scales = Array1::zeros(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let (normed, scale) = layer_norm_row(row, p, eps);
        out.row_mut(i).assign(&normed);
        scales[i] = scale;
    }
    (out, scales)
}

pub fn layer_norm_row(row: ArrayView1<'_, f32>, p: &LayerNormParams, eps: f32) -> (Array1<f32>, f32) {
    let d = row.len() as f64;
    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d;
    let var = row
        .iter()
        .map(|&v| {
            let c = f64::from(v) - mean;
            c * c
        })
        .sum::<f64>()
        / d;
    let scale = (var + f64::from(eps)).sqrt();
    let normed = Array1::from_iter(
        row.iter()
            .zip(p.w.iter().zip(p.b.iter()))
            .map(|(&v, (&w, &b))| ((f64::from(v) - mean) / scale) as f32 * w + b),
    );
    (normed, scale as f32)
}

fn softmax_rows_causal(scores: &mut Array2<f32>) {
    for (d, mut row) in scores.outer_iter_mut().enumerate() {
        let max = row
            .slice(s![..=d])
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f32;
        for (s, x) in row.iter_mut().enumerate() {
            if s > d {
                *x = 0.0;
            } else {
                *x = (*x - max).exp();
                total += *x;
            }
        }
        row.slice_mut(s![..=d]).mapv_inplace(|x| x / total);
    }
}

/// Entropy (nats) of `softmax(logits)`.
pub fn entropy_of_logits(logits: ArrayView1<'_, f32>) -> f64 {
    let lse = log_sum_exp(logits);
    logits
        .iter()
        .map(|&z| {
            let lp = f64::from(z) - lse;
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum()
}

pub fn log_sum_exp(logits: ArrayView1<'_, f32>) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    max + logits
        .iter()
        .map(|&z| (f64::from(z) - max).exp())
        .sum::<f64>()
        .ln()
}

struct PassOptions {
    unembed: bool,
}

impl ModelWeights {
    fn check_interventions(&self, len: usize, interventions: &[Intervention]) -> Result<()> {
        let c = &self.config;
        let check_positions = |p: &super::Positions| -> Result<()> {
            if let super::Positions::At(v) = p {
                if let Some(&bad) = v.iter().find(|&&i| i >= len) {
                    return Err(Error::OutOfBounds(format!(
                        "position {bad} outside window of length {len}"
                    )));
                }
            }
            Ok(())
        };
        for iv in interventions {
            match iv {
                Intervention::FixNeuron { neuron, positions, .. } => {
                    if neuron.layer >= c.n_layer || neuron.index >= c.d_mlp {
                        return Err(Error::OutOfBounds(format!("neuron {neuron}")));
                    }
                    check_positions(positions)?;
                }
                Intervention::PathAblate {
                    source,
                    target,
                    positions,
                } => {
                    if source.layer >= c.n_layer || source.index >= c.d_mlp {
                        return Err(Error::OutOfBounds(format!("neuron {source}")));
                    }
                    if target.layer >= c.n_layer || target.head >= c.n_head {
                        return Err(Error::OutOfBounds(format!("head {target}")));
                    }
                    if source.layer >= target.layer {
                        return Err(Error::Invalid(format!(
                            "neuron {source} does not feed head {target}"
                        )));
                    }
                    check_positions(positions)?;
                }
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let c = &self.config;
        if tokens.is_empty() {
            return Err(Error::Invalid("empty context window".into()));
        }
        if tokens.len() > c.n_ctx {
            return Err(Error::Invalid(format!(
                "window of {} tokens exceeds n_ctx {}",
                tokens.len(),
                c.n_ctx
            )));
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= c.d_vocab) {
            return Err(Error::TokenOutOfRange {
                id,
                d_vocab: c.d_vocab,
            });
        }
        Ok(())
    }

    /// Full forward pass: logits, requested hooks, entropy and loss.
    pub fn forward(
        &self,
        tokens: &[u32],
        hooks: &HookSet,
        interventions: &[Intervention],
    ) -> Result<ForwardOutput> {
        self.run(tokens, hooks, interventions, PassOptions { unembed: true })
    }

    /// Runs the blocks only; no unembedding, entropy or loss.
    pub fn activations(
        &self,
        tokens: &[u32],
        hooks: &HookSet,
        interventions: &[Intervention],
    ) -> Result<HookTrace> {
        Ok(self
            .run(tokens, hooks, interventions, PassOptions { unembed: false })?
            .trace)
    }

    fn run(
        &self,
        tokens: &[u32],
        hooks: &HookSet,
        interventions: &[Intervention],
        opts: PassOptions,
    ) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        self.check_interventions(tokens.len(), interventions)?;
        let c = &self.config;
        let t_len = tokens.len();
        let d_head = c.d_head();
        let inv_sqrt_dh = 1.0 / (d_head as f32).sqrt();
        let mut trace = HookTrace::default();

        // Post-activations that a path ablation will need later in the pass.
        let mut keep_post = vec![false; c.n_layer];
        for iv in interventions {
            if let Intervention::PathAblate { source, .. } = iv {
                keep_post[source.layer] = true;
            }
        }
        let mut kept_post: Vec<Option<Array2<f32>>> = vec![None; c.n_layer];

        let mut resid = Array2::<f32>::zeros((t_len, c.d_model));
        for (i, &tok) in tokens.iter().enumerate() {
            let mut row = resid.row_mut(i);
            row.assign(&self.w_e.row(tok as usize));
            row += &self.w_pos.row(i);
        }

        for (l, block) in self.blocks.iter().enumerate() {
            if hooks.contains(HookPoint::ResidPre(l)) {
                trace.insert(HookPoint::ResidPre(l), resid.clone().into_dyn());
            }
            let (ln_x, _) = layer_norm(resid.view(), &block.ln1, c.ln_eps);
            let attn = &block.attn;
            let mut attn_out = Array2::<f32>::zeros((t_len, c.d_model));
            let want_pattern = hooks.contains(HookPoint::AttnPattern(l));
            let want_value = hooks.contains(HookPoint::Value(l));
            let want_head_out = hooks.contains(HookPoint::HeadOut(l));
            let mut patterns = want_pattern.then(|| Array3::<f32>::zeros((c.n_head, t_len, t_len)));
            let mut values = want_value.then(|| Array3::<f32>::zeros((c.n_head, t_len, d_head)));
            let mut head_outs =
                want_head_out.then(|| Array3::<f32>::zeros((c.n_head, t_len, c.d_model)));

            for h in 0..c.n_head {
                let w_q = attn.w_q.index_axis(Axis(0), h);
                let w_k = attn.w_k.index_axis(Axis(0), h);
                let w_v = attn.w_v.index_axis(Axis(0), h);
                let mut q = ln_x.dot(&w_q) + attn.b_q.row(h);
                let k = ln_x.dot(&w_k) + attn.b_k.row(h);
                let v = ln_x.dot(&w_v) + attn.b_v.row(h);

                for iv in interventions {
                    let Intervention::PathAblate {
                        source,
                        target,
                        positions,
                    } = iv
                    else {
                        continue;
                    };
                    if target.layer != l || target.head != h {
                        continue;
                    }
                    let post = kept_post[source.layer]
                        .as_ref()
                        .expect("source layer precedes target layer");
                    let w_out = self.blocks[source.layer].mlp.w_out.row(source.index);
                    let dests = positions.resolve(t_len);
                    // Recompute through the same batched path as the clean
                    // query so an all-zero contribution changes nothing.
                    let mut edited = resid.clone();
                    for &pos in &dests {
                        let act = post[[pos, source.index]];
                        edited.row_mut(pos).scaled_add(-act, &w_out);
                    }
                    let (normed, _) = layer_norm(edited.view(), &block.ln1, c.ln_eps);
                    let q_edit = normed.dot(&w_q) + attn.b_q.row(h);
                    for &pos in &dests {
                        q.row_mut(pos).assign(&q_edit.row(pos));
                    }
                }

                let mut scores = q.dot(&k.t());
                scores.mapv_inplace(|x| x * inv_sqrt_dh);
                softmax_rows_causal(&mut scores);
                let z = scores.dot(&v);
                let out_h = z.dot(&attn.w_o.index_axis(Axis(0), h));
                attn_out += &out_h;

                if let Some(p) = patterns.as_mut() {
                    p.index_axis_mut(Axis(0), h).assign(&scores);
                }
                if let Some(vs) = values.as_mut() {
                    vs.index_axis_mut(Axis(0), h).assign(&v);
                }
                if let Some(o) = head_outs.as_mut() {
                    o.index_axis_mut(Axis(0), h).assign(&out_h);
                }
            }
            attn_out += &attn.b_o;
            if let Some(p) = patterns {
                trace.insert(HookPoint::AttnPattern(l), p.into_dyn());
            }
            if let Some(v) = values {
                trace.insert(HookPoint::Value(l), v.into_dyn());
            }
            if let Some(o) = head_outs {
                trace.insert(HookPoint::HeadOut(l), o.into_dyn());
            }
            resid += &attn_out;
            if hooks.contains(HookPoint::ResidMid(l)) {
                trace.insert(HookPoint::ResidMid(l), resid.clone().into_dyn());
            }

            let mlp = &block.mlp;
            let (ln_x, _) = layer_norm(resid.view(), &block.ln2, c.ln_eps);
            let pre = ln_x.dot(&mlp.w_in.t()) + &mlp.b_in;
            if hooks.contains(HookPoint::MlpPre(l)) {
                trace.insert(HookPoint::MlpPre(l), pre.clone().into_dyn());
            }
            let mut post = pre;
            c.activation.apply_inplace(post.view_mut());
            for iv in interventions {
                if let Intervention::FixNeuron {
                    neuron,
                    value,
                    positions,
                } = iv
                {
                    if neuron.layer == l {
                        for pos in positions.resolve(t_len) {
                            post[[pos, neuron.index]] = *value;
                        }
                    }
                }
            }
            let mlp_out = post.dot(&mlp.w_out) + &mlp.b_out;
            resid += &mlp_out;
            if hooks.contains(HookPoint::MlpPost(l)) {
                trace.insert(HookPoint::MlpPost(l), post.clone().into_dyn());
            }
            if keep_post[l] {
                kept_post[l] = Some(post);
            }
            if hooks.contains(HookPoint::ResidPost(l)) {
                trace.insert(HookPoint::ResidPost(l), resid.clone().into_dyn());
            }
        }

        if !opts.unembed {
            return Ok(ForwardOutput {
                logits: Array2::zeros((t_len, 0)),
                trace,
                entropy: Vec::new(),
                loss: Vec::new(),
                ln_final_scale: Vec::new(),
            });
        }

        let (ln_x, scales) = layer_norm(resid.view(), &self.ln_final, c.ln_eps);
        if hooks.contains(HookPoint::LnFinalScale) {
            trace.insert(HookPoint::LnFinalScale, scales.clone().into_dyn());
        }
        let logits = ln_x.dot(&self.w_u) + &self.b_u;
        let entropy = logits.outer_iter().map(entropy_of_logits).collect();
        let loss = (0..t_len.saturating_sub(1))
            .map(|i| {
                let row = logits.row(i);
                log_sum_exp(row) - f64::from(row[tokens[i + 1] as usize])
            })
            .collect();
        Ok(ForwardOutput {
            logits,
            trace,
            entropy,
            loss,
            ln_final_scale: scales.to_vec(),
        })
    }
}

/// Which side of the nonlinearity to read neurons from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronSide {
    Pre,
    Post,
}

impl ModelWeights {
    /// `[T, n_layer * d_mlp]` neuron values, layer-major.
    pub fn neuron_activations(
        &self,
        tokens: &[u32],
        side: NeuronSide,
        interventions: &[Intervention],
    ) -> Result<Array2<f32>> {
        let c = &self.config;
        let point = |l| match side {
            NeuronSide::Pre => HookPoint::MlpPre(l),
            NeuronSide::Post => HookPoint::MlpPost(l),
        };
        let hooks: HookSet = (0..c.n_layer).map(point).collect();
        let mut trace = self.activations(tokens, &hooks, interventions)?;
        let mut out = Array2::zeros((tokens.len(), c.n_neurons()));
        for l in 0..c.n_layer {
            let layer = trace.take(point(l)).expect("hook requested");
            out.slice_mut(s![.., l * c.d_mlp..(l + 1) * c.d_mlp])
                .assign(&layer.into_dimensionality::<ndarray::Ix2>().expect("rank 2"));
        }
        Ok(out)
    }
}
