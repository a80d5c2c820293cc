use ndarray::{Array1, Array2, Axis, Ix2, Ix3};

use super::*;
use crate::ids::{HeadId, NeuronId};
use crate::synth;

fn tokens(n: usize, d_vocab: u32, seed: u64) -> Vec<u32> {
    synth::random_tokens(1, n, d_vocab, n as u32, None, seed).documents[0].clone()
}

fn softmax(row: ndarray::ArrayView1<'_, f32>) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|&z| (f64::from(z) - lse).exp()).collect()
}

fn max_abs_prob_diff(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    a.outer_iter()
        .zip(b.outer_iter())
        .flat_map(|(x, y)| {
            softmax(x)
                .into_iter()
                .zip(softmax(y))
                .map(|(p, q)| (p - q).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

fn none() -> HookSet {
    HookSet::new()
}

#[test]
fn identity_norm_fold_only_centers_reading_rows() {
    let cfg = synth::config(1, 2, 8, 6, 5, 8);
    let mut w = synth::random_model(&cfg, 1);
    w.blocks[0].ln2 = LayerNormParams::identity(8);
    let folded = fold_layer_norm(&w).unwrap();
    let expected: Array2<f32> = {
        let mut e = w.blocks[0].mlp.w_in.clone();
        for mut row in e.outer_iter_mut() {
            let m = row.mean().unwrap();
            row.mapv_inplace(|x| x - m);
        }
        e
    };
    let diff = (&folded.blocks[0].mlp.w_in - &expected)
        .iter()
        .fold(0.0f32, |m, x| m.max(x.abs()));
    assert!(diff < 1e-6);
    assert_eq!(folded.blocks[0].mlp.b_in, w.blocks[0].mlp.b_in);
}

#[test]
fn fold_preserves_logits() {
    let cfg = synth::config(2, 2, 16, 32, 20, 64);
    let w = synth::random_model(&cfg, 2);
    let folded = fold_layer_norm(&w).unwrap();
    let toks = tokens(64, 20, 3);
    let a = w.forward(&toks, &none(), &[]).unwrap().logits;
    let b = folded.forward(&toks, &none(), &[]).unwrap().logits;
    let diff = (&a - &b).iter().fold(0.0f32, |m, x| m.max(x.abs()));
    assert!(diff < 1e-4, "max logit diff {diff}");
}

#[test]
fn folded_reading_rows_are_centered() {
    let cfg = synth::config(2, 2, 16, 32, 20, 16);
    let w = fold_layer_norm(&synth::random_model(&cfg, 4)).unwrap();
    let worst_row = |m: ndarray::ArrayView2<'_, f32>| {
        m.outer_iter()
            .map(|r| r.mean().unwrap().abs())
            .fold(0.0f32, f32::max)
    };
    for b in &w.blocks {
        assert!(worst_row(b.mlp.w_in.view()) < 1e-5);
        for w_h in b.attn.w_q.outer_iter().chain(b.attn.w_k.outer_iter()).chain(b.attn.w_v.outer_iter()) {
            // Reading matrices are [d_model, d_head]: each head column is centered.
            assert!(worst_row(w_h.t()) < 1e-5);
        }
        assert_eq!(b.ln1, LayerNormParams::identity(16));
    }
    assert!(worst_row(w.w_u.t()) < 1e-5);
}

#[test]
fn centering_preserves_probabilities_and_is_idempotent() {
    let cfg = synth::config(2, 2, 16, 32, 20, 32);
    let w = fold_layer_norm(&synth::random_model(&cfg, 5)).unwrap();
    let c = center_writing_and_unembed(&w).unwrap();
    let toks = tokens(32, 20, 6);
    let a = w.forward(&toks, &none(), &[]).unwrap().logits;
    let b = c.forward(&toks, &none(), &[]).unwrap().logits;
    assert!(max_abs_prob_diff(&a, &b) < 1e-6);

    let again = center_writing_and_unembed(&c).unwrap();
    let drift = (&again.blocks[1].mlp.w_out - &c.blocks[1].mlp.w_out)
        .iter()
        .chain((&again.w_u - &c.w_u).iter())
        .fold(0.0f32, |m, x| m.max(x.abs()));
    assert!(drift < 1e-6);
    for row in c.blocks[0].mlp.w_out.outer_iter() {
        assert!(row.mean().unwrap().abs() < 1e-6);
    }
}

#[test]
fn softmax_ignores_constant_logit_shift() {
    let row = ndarray::arr1(&[0.5f32, -1.0, 2.0, 0.0]);
    let shifted = row.mapv(|x| x + 3.0);
    let (p, q) = (softmax(row.view()), softmax(shifted.view()));
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn one_hot_shift_model_predicts_next_token() {
    let v = 7;
    let mut cfg = synth::config(1, 1, v, 2, v, 8);
    cfg.preprocessed = true;
    let mut w = synth::zero_model(&cfg);
    for t in 0..v {
        w.w_e[[t, t]] = 1.0;
        w.w_u[[t, (t + 1) % v]] = 1.0;
    }
    let toks = vec![0u32, 3, 6, 2, 5];
    let out = w.forward(&toks, &none(), &[]).unwrap();
    for (i, &t) in toks.iter().enumerate() {
        // Hand computation: LN(e_t)[k] = (delta_tk - 1/v) / sqrt(1/v - 1/v^2 + eps),
        // and logit[u] reads coordinate u - 1.
        let s = ((1.0 / v as f64) - 1.0 / (v * v) as f64 + 1e-5).sqrt();
        for u in 0..v {
            let k = (u + v - 1) % v;
            let expect = ((if k == t as usize { 1.0 } else { 0.0 }) - 1.0 / v as f64) / s;
            assert!((f64::from(out.logits[[i, u]]) - expect).abs() < 1e-5);
        }
        let argmax = out
            .logits
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, (t as usize + 1) % v);
    }
}

#[test]
fn uniform_and_peaked_entropy() {
    let uniform = Array1::<f32>::zeros(50);
    assert!((entropy_of_logits(uniform.view()) - (50f64).ln()).abs() < 1e-12);
    let mut peaked = Array1::<f32>::zeros(50);
    peaked[3] = 200.0;
    assert!(entropy_of_logits(peaked.view()) < 1e-12);
}

#[test]
fn attention_rows_sum_to_one_and_are_causal() {
    let cfg = synth::config(2, 4, 16, 16, 20, 24);
    let w = preprocess(&synth::random_model(&cfg, 8)).unwrap();
    let toks = tokens(24, 20, 9);
    let hooks: HookSet = [HookPoint::AttnPattern(0), HookPoint::AttnPattern(1)].into_iter().collect();
    let out = w.forward(&toks, &hooks, &[]).unwrap();
    for l in 0..2 {
        let p = out.trace.require(HookPoint::AttnPattern(l)).unwrap().clone().into_dimensionality::<Ix3>().unwrap();
        for head in p.outer_iter() {
            for (d, row) in head.outer_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-5);
                assert!(row.iter().skip(d + 1).all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn fixing_a_zero_writer_changes_nothing() {
    let cfg = synth::config(2, 2, 16, 16, 20, 16);
    let mut w = preprocess(&synth::random_model(&cfg, 10)).unwrap();
    w.blocks[0].mlp.w_out.row_mut(5).fill(0.0);
    let toks = tokens(16, 20, 11);
    let clean = w.forward(&toks, &none(), &[]).unwrap();
    let fixed = w
        .forward(
            &toks,
            &none(),
            &[Intervention::FixNeuron {
                neuron: NeuronId::new(0, 5),
                value: 42.0,
                positions: Positions::All,
            }],
        )
        .unwrap();
    assert_eq!(clean.logits, fixed.logits);
    assert_eq!(clean.entropy, fixed.entropy);
}

#[test]
fn fixing_the_value_already_taken_is_bitwise_identical() {
    let cfg = synth::config(2, 2, 16, 16, 20, 16);
    let w = preprocess(&synth::random_model(&cfg, 12)).unwrap();
    let toks = tokens(16, 20, 13);
    let hooks = HookSet::new().with(HookPoint::MlpPost(0));
    let clean = w.forward(&toks, &hooks, &[]).unwrap();
    let post = clean.trace.require(HookPoint::MlpPost(0)).unwrap().clone().into_dimensionality::<Ix2>().unwrap();
    let pos = 7;
    let fixed = w
        .forward(
            &toks,
            &none(),
            &[Intervention::FixNeuron {
                neuron: NeuronId::new(0, 3),
                value: post[[pos, 3]],
                positions: Positions::At(vec![pos]),
            }],
        )
        .unwrap();
    assert_eq!(clean.logits, fixed.logits);
}

/// Independent f64 recomputation of one head's attention row and output
/// with the neuron's contribution removed from the query input only.
fn manual_ablated_row(
    w: &ModelWeights,
    resid: &Array2<f32>,
    act: f32,
    source: NeuronId,
    head: usize,
    layer: usize,
    dest: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ln = |r: Vec<f64>, p: &LayerNormParams| -> Vec<f64> {
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let s = (var + 1e-5).sqrt();
        r.iter()
            .enumerate()
            .map(|(k, x)| (x - mean) / s * f64::from(p.w[k]) + f64::from(p.b[k]))
            .collect()
    };
    let block = &w.blocks[layer];
    let a = &block.attn;
    let dh = w.config.d_head();
    let dm = w.config.d_model;
    let project = |x: &[f64], m: ndarray::ArrayView2<'_, f32>, b: ndarray::ArrayView1<'_, f32>| -> Vec<f64> {
        (0..dh)
            .map(|j| (0..dm).map(|k| x[k] * f64::from(m[[k, j]])).sum::<f64>() + f64::from(b[j]))
            .collect()
    };
    let row = |i: usize| resid.row(i).iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let w_out = w.blocks[source.layer].mlp.w_out.row(source.index);
    let edited: Vec<f64> = row(dest)
        .iter()
        .zip(w_out.iter())
        .map(|(r, &o)| r - f64::from(act) * f64::from(o))
        .collect();
    let q = project(&ln(edited, &block.ln1), a.w_q.index_axis(Axis(0), head), a.b_q.row(head));
    let mut scores = Vec::new();
    let mut values = Vec::new();
    for s in 0..=dest {
        let x = ln(row(s), &block.ln1);
        let k = project(&x, a.w_k.index_axis(Axis(0), head), a.b_k.row(head));
        values.push(project(&x, a.w_v.index_axis(Axis(0), head), a.b_v.row(head)));
        scores.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt());
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let pattern: Vec<f64> = scores.iter().map(|s| (s - max).exp() / z).collect();
    let w_o = a.w_o.index_axis(Axis(0), head);
    let out: Vec<f64> = (0..dm)
        .map(|k| {
            (0..dh)
                .map(|j| {
                    let zj: f64 = pattern.iter().zip(&values).map(|(p, v)| p * v[j]).sum();
                    zj * f64::from(w_o[[j, k]])
                })
                .sum()
        })
        .collect();
    (pattern, out)
}

#[test]
fn path_ablation_matches_manual_forward() {
    let cfg = synth::config(2, 2, 16, 16, 20, 20);
    let w = preprocess(&synth::random_model(&cfg, 14)).unwrap();
    let toks = tokens(20, 20, 15);
    let source = NeuronId::new(0, 4);
    let target = HeadId::new(1, 1);
    let dests = vec![11, 15, 19];
    let clean = w
        .forward(&toks, &[HookPoint::ResidPre(1), HookPoint::MlpPost(0)].into_iter().collect(), &[])
        .unwrap();
    let resid = clean.trace.require(HookPoint::ResidPre(1)).unwrap().clone().into_dimensionality::<Ix2>().unwrap();
    let post = clean.trace.require(HookPoint::MlpPost(0)).unwrap().clone().into_dimensionality::<Ix2>().unwrap();
    let ablated = w
        .forward(
            &toks,
            &[HookPoint::AttnPattern(1), HookPoint::HeadOut(1)].into_iter().collect(),
            &[Intervention::PathAblate {
                source,
                target,
                positions: Positions::At(dests.clone()),
            }],
        )
        .unwrap();
    let pattern = ablated.trace.require(HookPoint::AttnPattern(1)).unwrap();
    let head_out = ablated.trace.require(HookPoint::HeadOut(1)).unwrap();
    for &d in &dests {
        let (p, o) = manual_ablated_row(&w, &resid, post[[d, 4]], source, 1, 1, d);
        for (s, want) in p.iter().enumerate() {
            assert!((f64::from(pattern[[1, d, s]]) - want).abs() < 1e-5);
        }
        for (k, want) in o.iter().enumerate() {
            assert!((f64::from(head_out[[1, d, k]]) - want).abs() < 1e-5);
        }
    }
    // Other positions and the sibling head are untouched.
    let clean_p = w.forward(&toks, &[HookPoint::AttnPattern(1)].into_iter().collect(), &[]).unwrap();
    let clean_p = clean_p.trace.require(HookPoint::AttnPattern(1)).unwrap();
    for d in 0..20 {
        if !dests.contains(&d) {
            assert_eq!(clean_p.slice(ndarray::s![1, d, ..]), pattern.slice(ndarray::s![1, d, ..]));
        }
        assert_eq!(clean_p.slice(ndarray::s![0, d, ..]), pattern.slice(ndarray::s![0, d, ..]));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let cfg = synth::config(2, 2, 8, 8, 10, 6);
    let w = synth::random_model(&cfg, 16);
    assert!(matches!(
        w.forward(&[1, 10], &none(), &[]).unwrap_err(),
        crate::Error::TokenOutOfRange { id: 10, .. }
    ));
    assert!(w.forward(&[1; 7], &none(), &[]).is_err());
    assert!(w.forward(&[], &none(), &[]).is_err());
    let bad = Intervention::FixNeuron {
        neuron: NeuronId::new(2, 0),
        value: 1.0,
        positions: Positions::All,
    };
    assert!(matches!(w.forward(&[1, 2], &none(), &[bad]).unwrap_err(), crate::Error::OutOfBounds(_)));
    let backwards = Intervention::PathAblate {
        source: NeuronId::new(1, 0),
        target: HeadId::new(1, 0),
        positions: Positions::All,
    };
    assert!(w.forward(&[1, 2], &none(), &[backwards]).is_err());
    let far = Intervention::FixNeuron {
        neuron: NeuronId::new(0, 0),
        value: 1.0,
        positions: Positions::At(vec![5]),
    };
    assert!(w.forward(&[1, 2], &none(), &[far]).is_err());
}

#[test]
fn model_directory_round_trip() {
    let cfg = synth::config(2, 2, 8, 8, 10, 6);
    let w = synth::random_model(&cfg, 17);
    let dir = tempfile::tempdir().unwrap();
    w.save(dir.path()).unwrap();
    assert_eq!(ModelWeights::load(dir.path()).unwrap(), w);
}

#[test]
fn tied_embeddings_fill_missing_unembedding() {
    let mut cfg = synth::config(1, 1, 4, 4, 6, 4);
    cfg.tied_embeddings = true;
    let mut w = synth::random_model(&cfg, 18);
    w.w_u = w.w_e.t().to_owned();
    let dir = tempfile::tempdir().unwrap();
    w.save(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("unembed.W_U.bin")).unwrap();
    let back = ModelWeights::load(dir.path()).unwrap();
    assert_eq!(back.w_u, w.w_e.t());
}
