use serde::Serialize;

use crate::error::{Error, Result};

/// Reduction in variance of an activation when conditioned on a binary label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RivResult {
    /// `1 - ((1-β)σ₀² + βσ₁²) / σ²`; NaN when σ² is zero.
    pub score: f64,
    /// Fraction of positive labels.
    pub beta: f64,
    pub var_neg: f64,
    pub var_pos: f64,
    pub var: f64,
    pub count: usize,
    /// A class held fewer than two tokens; its variance was taken as 0.
    pub degenerate: bool,
}

/// Population mean and variance, two-pass.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Scores how much of an activation's variance a label explains. Positions
/// where `mask` is false are skipped.
pub fn reduction_in_variance(acts: &[f64], labels: &[u8], mask: Option<&[bool]>) -> Result<RivResult> {
    if acts.len() != labels.len() || mask.is_some_and(|m| m.len() != acts.len()) {
        return Err(Error::Shape(format!(
            "{} activations, {} labels, {} mask entries",
            acts.len(),
            labels.len(),
            mask.map_or(acts.len(), <[bool]>::len)
        )));
    }
    let mut all = Vec::with_capacity(acts.len());
    let (mut neg, mut pos) = (Vec::new(), Vec::new());
    for (i, (&a, &y)) in acts.iter().zip(labels).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        all.push(a);
        if y == 1 {
            pos.push(a);
        } else {
            neg.push(a);
        }
    }
    if all.len() < 2 {
        return Err(Error::Numeric(format!("need at least 2 tokens, have {}", all.len())));
    }
    let n = all.len() as f64;
    let beta = pos.len() as f64 / n;
    let var = mean_var(&all).1;
    let degenerate = (pos.len() == 1) || (neg.len() == 1);
    let class_var = |xs: &[f64]| if xs.len() < 2 { 0.0 } else { mean_var(xs).1 };
    let (var_neg, var_pos) = (class_var(&neg), class_var(&pos));
    let score = if var == 0.0 {
        f64::NAN
    } else if pos.is_empty() {
        1.0 - var_neg / var
    } else if neg.is_empty() {
        1.0 - var_pos / var
    } else {
        1.0 - ((1.0 - beta) * var_neg + beta * var_pos) / var
    };
    Ok(RivResult {
        score,
        beta,
        var_neg,
        var_pos,
        var,
        count: all.len(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_split_scores_one() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let acts: Vec<f64> = labels.iter().map(|&y| if y == 1 { 2.5 } else { -1.0 }).collect();
        let r = reduction_in_variance(&acts, &labels, None).unwrap();
        assert_eq!(r.score, 1.0);
        assert!((r.beta - 34.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn all_negative_labels_score_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let acts: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 7.0 - 1.0).collect();
        let r = reduction_in_variance(&acts, &vec![0; 1000], None).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!(r.beta, 0.0);
    }

    #[test]
    fn independent_labels_score_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let acts: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = (0..100_000).map(|_| rng.random_bool(0.3) as u8).collect();
        let r = reduction_in_variance(&acts, &labels, None).unwrap();
        assert!(r.score.abs() < 0.01, "{}", r.score);
    }

    #[test]
    fn mask_and_errors() {
        let acts = [1.0, 2.0, 100.0, 1.0, 2.0];
        let labels = [0, 1, 1, 0, 1];
        let r = reduction_in_variance(&acts, &labels, Some(&[true, true, false, true, true])).unwrap();
        assert_eq!(r.count, 4);
        assert_eq!(r.score, 1.0);
        assert!(reduction_in_variance(&[1.0, 1.0], &[0, 1], None).unwrap().score.is_nan());
        assert!(reduction_in_variance(&[1.0], &[0, 1], None).is_err());
        let d = reduction_in_variance(&[1.0, 2.0, 3.0], &[1, 0, 0], None).unwrap();
        assert!(d.degenerate && d.var_pos == 0.0);
    }

    proptest! {
        /// Equals the between-groups share of the total sum of squares.
        #[test]
        fn matches_anova_r2(data in proptest::collection::vec((-100.0f64..100.0, any::<bool>()), 4..300)) {
            let acts: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1 as u8).collect();
            let r = reduction_in_variance(&acts, &labels, None).unwrap();
            let n = acts.len() as f64;
            let grand = acts.iter().sum::<f64>() / n;
            let sst: f64 = acts.iter().map(|a| (a - grand).powi(2)).sum();
            let mut ssb = 0.0;
            for y in [0u8, 1] {
                let g: Vec<f64> = acts.iter().zip(&labels).filter(|(_, &l)| l == y).map(|(a, _)| *a).collect();
                if !g.is_empty() {
                    let m = g.iter().sum::<f64>() / g.len() as f64;
                    ssb += g.len() as f64 * (m - grand).powi(2);
                }
            }
            prop_assume!(sst > 1e-6);
            prop_assert!(r.score <= 1.0 + 1e-12);
            prop_assert!((r.score - ssb / sst).abs() <= 1e-10 * (ssb / sst).abs().max(1e-2));
        }
    }
}
