use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-neuron maxima against one comparison model.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMax {
    pub max: Vec<f64>,
    /// Best-matching neuron of the comparison model; `None` when every entry is undefined.
    pub argmax: Vec<Option<usize>>,
    pub baseline_max: Vec<f64>,
}

/// Largest defined entry and its lowest index; NaN entries are skipped.
pub fn max_with_index(row: ArrayView1<'_, f64>) -> (f64, Option<usize>) {
    let mut best = f64::NAN;
    let mut idx = None;
    for (j, &x) in row.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        if idx.is_none() || x > best {
            best = x;
            idx = Some(j);
        }
    }
    (best, idx)
}

impl ComparisonMax {
    /// `corr` is `N_ref × N_cmp`; `baseline` is `N_ref × N_rotated` and its
    /// maximum is taken over every rotated unit of every layer.
    pub fn from_matrices(corr: ArrayView2<'_, f64>, baseline: ArrayView2<'_, f64>) -> Result<Self> {
        if corr.nrows() != baseline.nrows() {
            return Err(Error::Shape(format!(
                "correlation has {} reference neurons, baseline has {}",
                corr.nrows(),
                baseline.nrows()
            )));
        }
        let (max, argmax) = corr.outer_iter().map(max_with_index).unzip();
        let baseline_max = baseline.outer_iter().map(|r| max_with_index(r).0).collect();
        Ok(Self {
            max,
            argmax,
            baseline_max,
        })
    }

    pub fn len(&self) -> usize {
        self.max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityRecord {
    /// Flat (layer-major) index in the reference model.
    pub neuron: usize,
    pub max_corr: Vec<f64>,
    pub argmax: Vec<Option<usize>>,
    pub baseline_max: Vec<f64>,
    pub mean_max: f64,
    pub mean_baseline: f64,
    /// `mean_max - mean_baseline`.
    pub excess: f64,
    pub max_max: f64,
    pub min_max: f64,
    pub is_universal: bool,
}

/// Threshold on excess correlation used when none is given.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean-max correlation, mean-max baseline and their difference for each
/// reference neuron, across all comparison models.
pub fn summarize_universality(
    comparisons: &[ComparisonMax],
    threshold: f64,
) -> Result<Vec<UniversalityRecord>> {
    let first = comparisons
        .first()
        .ok_or_else(|| Error::Invalid("no comparison models given".into()))?;
    let n = first.len();
    for c in comparisons {
        if c.len() != n || c.baseline_max.len() != n || c.argmax.len() != n {
            return Err(Error::Shape(
                "comparison models disagree on the reference neuron count".into(),
            ));
        }
    }
    Ok((0..n)
        .map(|i| {
            let max_corr: Vec<f64> = comparisons.iter().map(|c| c.max[i]).collect();
            let argmax = comparisons.iter().map(|c| c.argmax[i]).collect();
            let baseline_max: Vec<f64> = comparisons.iter().map(|c| c.baseline_max[i]).collect();
            let mean_max = mean(&max_corr);
            let mean_baseline = mean(&baseline_max);
            let excess = mean_max - mean_baseline;
            let max_max = max_corr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min_max = max_corr.iter().copied().fold(f64::INFINITY, f64::min);
            let defined = max_corr.iter().all(|x| !x.is_nan());
            UniversalityRecord {
                neuron: i,
                max_corr,
                argmax,
                baseline_max,
                mean_max,
                mean_baseline,
                excess,
                max_max: if defined { max_max } else { f64::NAN },
                min_max: if defined { min_max } else { f64::NAN },
                is_universal: excess > threshold,
            }
        })
        .collect())
}

/// Convenience form over full correlation and baseline matrices.
pub fn summarize_matrices(
    corrs: &[ArrayView2<'_, f64>],
    baselines: &[ArrayView2<'_, f64>],
    threshold: f64,
) -> Result<Vec<UniversalityRecord>> {
    if corrs.len() != baselines.len() {
        return Err(Error::Invalid(
            "need exactly one baseline matrix per comparison model".into(),
        ));
    }
    let comparisons = corrs
        .iter()
        .zip(baselines)
        .map(|(c, b)| ComparisonMax::from_matrices(c.view(), b.view()))
        .collect::<Result<Vec<_>>>()?;
    summarize_universality(&comparisons, threshold)
}
