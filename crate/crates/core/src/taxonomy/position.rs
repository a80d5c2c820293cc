use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ACT_BINS: usize = 16;
pub const DEFAULT_POS_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionProfile {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionMi {
    /// Mutual information in nats.
    pub mi: f64,
    pub act_bins: usize,
    pub pos_bins: usize,
    /// Activation mean and standard deviation at each context position.
    pub profile: Vec<PositionProfile>,
}

/// Equal-mass bin edges: `act_bins - 1` interior cut points. A value equal to
/// an edge falls in the upper bin.
pub fn equal_mass_edges(sorted: &[f64], act_bins: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..act_bins)
        .map(|k| sorted[((k * n) / act_bins).min(n.saturating_sub(1))])
        .collect()
}

pub fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e <= x)
}

/// Position bin of `pos` in a context of `ctx` positions, equal width.
pub fn position_bin(pos: usize, ctx: usize, pos_bins: usize) -> usize {
    pos * pos_bins / ctx
}

/// Mutual information between a binned activation and its binned context
/// position, over a `windows × ctx` matrix of activations. Entries where
/// `mask` is false are left out of the histogram and the profile.
pub fn position_mutual_information(
    acts: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    act_bins: usize,
    pos_bins: usize,
) -> Result<PositionMi> {
    let (n_win, ctx) = acts.dim();
    if act_bins < 2 || pos_bins < 2 {
        return Err(Error::Invalid("need at least 2 activation and 2 position bins".into()));
    }
    if n_win < act_bins {
        return Err(Error::Invalid(format!("{n_win} windows is fewer than {act_bins} activation bins")));
    }
    if ctx < pos_bins {
        return Err(Error::Invalid(format!("context of {ctx} is shorter than {pos_bins} position bins")));
    }
    if mask.is_some_and(|m| m.dim() != acts.dim()) {
        return Err(Error::Shape("position mask does not match activations".into()));
    }
    let keep = |w: usize, p: usize| mask.is_none_or(|m| m[[w, p]]);
    let mut sorted = Vec::with_capacity(acts.len());
    for ((w, p), &x) in acts.indexed_iter() {
        if keep(w, p) {
            if !x.is_finite() {
                return Err(Error::Numeric("non-finite activation in position MI input".into()));
            }
            sorted.push(x);
        }
    }
    sorted.sort_by(f64::total_cmp);
    let edges = equal_mass_edges(&sorted, act_bins);

    let mut joint = vec![0usize; act_bins * pos_bins];
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); ctx];
    for ((w, p), &x) in acts.indexed_iter() {
        if keep(w, p) {
            joint[bin_of(&edges, x) * pos_bins + position_bin(p, ctx, pos_bins)] += 1;
            sums[p].0 += 1;
            sums[p].1 += x;
        }
    }
    for ((w, p), &x) in acts.indexed_iter() {
        if keep(w, p) {
            let mean = sums[p].1 / sums[p].0 as f64;
            sums[p].2 += (x - mean).powi(2);
        }
    }
    let profile = sums
        .iter()
        .map(|&(n, s, ss)| {
            if n == 0 {
                PositionProfile {
                    mean: f64::NAN,
                    std: f64::NAN,
                }
            } else {
                PositionProfile {
                    mean: s / n as f64,
                    std: (ss / n as f64).sqrt(),
                }
            }
        })
        .collect();
    Ok(PositionMi {
        mi: mi_from_counts(&joint, act_bins, pos_bins),
        act_bins,
        pos_bins,
        profile,
    })
}

/// Plug-in mutual information of a row-major `rows × cols` count table.
pub fn mi_from_counts(joint: &[usize], rows: usize, cols: usize) -> f64 {
    let total: usize = joint.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut pr = vec![0.0; rows];
    let mut pc = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let p = joint[r * cols + c] as f64 / n;
            pr[r] += p;
            pc[c] += p;
        }
    }
    let mut mi = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let p = joint[r * cols + c] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (pr[r] * pc[c])).ln();
            }
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn injective_in_position_bin_saturates() {
        let acts = Array2::from_shape_fn((200, 64), |(_, p)| (position_bin(p, 64, 16) as f64).powi(2) - 3.0);
        let r = position_mutual_information(acts.view(), None, 16, 16).unwrap();
        let want = 16f64.ln();
        assert!((r.mi - want).abs() / want < 0.02, "{} vs {}", r.mi, want);
    }

    #[test]
    fn independent_of_position() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let acts = Array2::from_shape_fn((10_000, 32), |_| rng.random::<f64>());
        let r = position_mutual_information(acts.view(), None, DEFAULT_ACT_BINS, DEFAULT_POS_BINS).unwrap();
        assert!(r.mi < 0.01, "{}", r.mi);
        assert_eq!(r.profile.len(), 32);
    }

    /// Direct joint histogram built from explicitly sorted bin boundaries.
    fn brute_force(acts: &Array2<f64>, act_bins: usize, pos_bins: usize) -> f64 {
        let (w, ctx) = acts.dim();
        let mut vals: Vec<f64> = acts.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        let mut joint = vec![vec![0f64; pos_bins]; act_bins];
        for i in 0..w {
            for p in 0..ctx {
                let x = acts[[i, p]];
                let rank = vals.iter().filter(|&&v| v < x).count();
                let mut a = 0;
                while a + 1 < act_bins && rank >= (a + 1) * n / act_bins {
                    a += 1;
                }
                joint[a][p * pos_bins / ctx] += 1.0 / n as f64;
            }
        }
        let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pp: Vec<f64> = (0..pos_bins).map(|c| joint.iter().map(|r| r[c]).sum()).collect();
        let mut mi = 0.0;
        for a in 0..act_bins {
            for c in 0..pos_bins {
                if joint[a][c] > 0.0 {
                    mi += joint[a][c] * (joint[a][c] / (pa[a] * pp[c])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn noisy_position_matches_histogram_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let acts = Array2::from_shape_fn((100, 32), |(_, p)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            position_bin(p, 32, 8) as f64 + 0.3 * z
        });
        let r = position_mutual_information(acts.view(), None, 8, 8).unwrap();
        let oracle = brute_force(&acts, 8, 8);
        assert!((r.mi - oracle).abs() / oracle < 0.05, "{} vs {}", r.mi, oracle);
        assert!(r.mi > 0.5);
    }

    #[test]
    fn masked_entries_are_ignored() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut acts = Array2::from_shape_fn((400, 16), |_| rng.random::<f64>());
        let mask = Array2::from_shape_fn((400, 16), |(_, p)| p != 0);
        // Position 0 would otherwise carry all the information.
        acts.column_mut(0).fill(1e6);
        let r = position_mutual_information(acts.view(), Some(mask.view()), 8, 8).unwrap();
        assert!(r.mi < 0.02, "{}", r.mi);
        assert!(r.profile[0].mean.is_nan());
    }

    #[test]
    fn too_few_windows() {
        let acts = Array2::<f64>::zeros((4, 32));
        assert!(position_mutual_information(acts.view(), None, 16, 32).is_err());
    }
}
