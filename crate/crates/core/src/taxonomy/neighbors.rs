use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::ids::NeuronId;
use crate::model::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBasis {
    Input,
    Output,
}

/// Most and least similar other neuron of the same model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeighborRecord {
    pub neuron: NeuronId,
    /// NaN when the neuron's vector is zero or it has no valid partner.
    pub max_cos: f64,
    pub argmax: Option<NeuronId>,
    pub min_cos: f64,
    pub argmin: Option<NeuronId>,
}

const CHUNK: usize = 512;

/// Unit-normalized weight rows of every neuron, layer-major; zero rows stay
/// zero and are reported as invalid.
fn unit_rows(w: &ModelWeights, basis: WeightBasis) -> (Array2<f64>, Vec<bool>) {
    let c = &w.config;
    let mut m = Array2::<f64>::zeros((c.n_neurons(), c.d_model));
    let mut valid = vec![false; c.n_neurons()];
    for (l, b) in w.blocks.iter().enumerate() {
        let src = match basis {
            WeightBasis::Input => &b.mlp.w_in,
            WeightBasis::Output => &b.mlp.w_out,
        };
        for (j, row) in src.outer_iter().enumerate() {
            let i = l * c.d_mlp + j;
            let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                valid[i] = true;
                m.row_mut(i).assign(&row.mapv(|x| f64::from(x) / norm));
            }
        }
    }
    (m, valid)
}

/// For every neuron, the highest and lowest cosine against all other neurons.
/// Ties go to the lowest flat index.
pub fn nearest_weight_neighbor(w: &ModelWeights, basis: WeightBasis) -> Vec<NeighborRecord> {
    let d_mlp = w.config.d_mlp;
    let (m, valid) = unit_rows(w, basis);
    let n = m.nrows();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let gram = m.slice(s![start..end, ..]).dot(&m.t());
        for (k, row) in gram.outer_iter().enumerate() {
            let i = start + k;
            let mut best: Option<(f64, usize)> = None;
            let mut worst: Option<(f64, usize)> = None;
            if valid[i] {
                for (j, &c) in row.iter().enumerate() {
                    if j == i || !valid[j] {
                        continue;
                    }
                    let c = c.clamp(-1.0, 1.0);
                    if best.is_none_or(|(b, _)| c > b) {
                        best = Some((c, j));
                    }
                    if worst.is_none_or(|(b, _)| c < b) {
                        worst = Some((c, j));
                    }
                }
            }
            out.push(NeighborRecord {
                neuron: NeuronId::from_flat(i, d_mlp),
                max_cos: best.map_or(f64::NAN, |b| b.0),
                argmax: best.map(|b| NeuronId::from_flat(b.1, d_mlp)),
                min_cos: worst.map_or(f64::NAN, |b| b.0),
                argmin: worst.map(|b| NeuronId::from_flat(b.1, d_mlp)),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn planted_duplicate_and_antipode() {
        let cfg = synth::config(2, 2, 32, 16, 10, 8);
        let mut w = synth::random_model(&cfg, 4);
        let src = w.blocks[0].mlp.w_in.row(3).to_owned();
        w.blocks[1].mlp.w_in.row_mut(5).assign(&src);
        let out = w.blocks[0].mlp.w_out.row(2).to_owned();
        w.blocks[1].mlp.w_out.row_mut(7).assign(&(&out * -0.9));
        w.blocks[0].mlp.w_out.row_mut(9).fill(0.0);

        let inp = nearest_weight_neighbor(&w, WeightBasis::Input);
        let (a, b) = (&inp[3], &inp[16 + 5]);
        assert!((a.max_cos - 1.0).abs() < 1e-12 && (b.max_cos - 1.0).abs() < 1e-12);
        assert_eq!(a.argmax, Some(NeuronId::new(1, 5)));
        assert_eq!(b.argmax, Some(NeuronId::new(0, 3)));

        let outp = nearest_weight_neighbor(&w, WeightBasis::Output);
        let anti = &outp[2];
        assert!((anti.min_cos + 1.0).abs() < 1e-12);
        assert_eq!(anti.argmin, Some(NeuronId::new(1, 7)));
        assert!(anti.max_cos < 0.9 && anti.argmax != Some(NeuronId::new(1, 7)));
        assert!(outp[9].max_cos.is_nan() && outp[9].argmax.is_none());
        assert!(outp.iter().all(|r| r.argmax != Some(NeuronId::new(0, 9))));
    }

    #[test]
    fn matches_all_pairs_brute_force() {
        let cfg = synth::config(1, 4, 256, 1024, 10, 8);
        let w = synth::random_model(&cfg, 12);
        let rec = nearest_weight_neighbor(&w, WeightBasis::Input);
        let rows: Vec<Vec<f64>> = w.blocks[0].mlp.w_in.outer_iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        for i in (0..1024).step_by(97) {
            let mut best = (f64::NEG_INFINITY, 0);
            for j in 0..1024 {
                if j != i {
                    let c = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j]);
                    if c > best.0 {
                        best = (c, j);
                    }
                }
            }
            assert!((rec[i].max_cos - best.0).abs() < 1e-9);
            assert_eq!(rec[i].argmax, Some(NeuronId::new(0, best.1)));
        }
        let mean_max = rec.iter().map(|r| r.max_cos).sum::<f64>() / 1024.0;
        assert!(mean_max > 0.0 && mean_max < 0.4, "{mean_max}");
    }
}
