use serde::{Deserialize, Serialize};

use crate::stats::{quantile, vector_moments};

pub const DEFAULT_KURTOSIS_THRESHOLD: f64 = 10.0;
pub const DEFAULT_VARIANCE_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabClass {
    Prediction,
    Suppression,
    Partition,
    None,
}

impl VocabClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Prediction => "prediction",
            Self::Suppression => "suppression",
            Self::Partition => "partition",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VocabThresholds {
    pub kurtosis: f64,
    /// Variance above which a low-kurtosis vector counts as a partition.
    pub variance_cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VocabEffectClass {
    pub class: VocabClass,
    pub variance: f64,
    pub skew: f64,
    pub kurtosis: f64,
    pub thresholds: VocabThresholds,
}

/// Classifies from precomputed moments. NaN moments classify as `None`.
pub fn classify_moments(variance: f64, skew: f64, kurtosis: f64, t: VocabThresholds) -> VocabEffectClass {
    let class = if kurtosis > t.kurtosis && skew > 0.0 {
        VocabClass::Prediction
    } else if kurtosis > t.kurtosis && skew < 0.0 {
        VocabClass::Suppression
    } else if kurtosis <= t.kurtosis && variance > t.variance_cutoff {
        VocabClass::Partition
    } else {
        VocabClass::None
    };
    VocabEffectClass {
        class,
        variance,
        skew,
        kurtosis,
        thresholds: t,
    }
}

/// Classifies a logit-effect vector `W_U^T w_out` (or its cosine form).
pub fn classify_vocab_effect(effect: &[f64], t: VocabThresholds) -> VocabEffectClass {
    let m = vector_moments(effect);
    classify_moments(m.variance, m.skew, m.kurtosis, t)
}

/// The `q` quantile of one layer's effect variances.
pub fn variance_cutoff(layer_variances: &[f64], q: f64) -> f64 {
    quantile(layer_variances, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(cut: f64) -> VocabThresholds {
        VocabThresholds {
            kurtosis: DEFAULT_KURTOSIS_THRESHOLD,
            variance_cutoff: cut,
        }
    }

    #[test]
    fn planted_shapes() {
        let mut spike = vec![0.0; 5000];
        spike[..50].iter_mut().for_each(|x| *x = 10.0);
        let p = classify_vocab_effect(&spike, t(1e9));
        assert_eq!(p.class, VocabClass::Prediction);
        // Scaled Bernoulli(0.01): kurtosis (1 - 3pq)/pq.
        assert!((p.kurtosis - (1.0 - 3.0 * 0.0099) / 0.0099).abs() < 1e-6);
        let neg: Vec<f64> = spike.iter().map(|x| -x).collect();
        assert_eq!(classify_vocab_effect(&neg, t(1e9)).class, VocabClass::Suppression);
        let halves: Vec<f64> = (0..5000).map(|i| if i < 2500 { 5.0 } else { -5.0 }).collect();
        let h = classify_vocab_effect(&halves, t(1.0));
        assert_eq!(h.class, VocabClass::Partition);
        assert!((h.kurtosis - 1.0).abs() < 1e-12);
        assert_eq!(classify_vocab_effect(&halves, t(100.0)).class, VocabClass::None);
    }

    #[test]
    fn shape_classes_ignore_positive_scale() {
        let mut spike = vec![0.0; 1000];
        spike[..7].iter_mut().for_each(|x| *x = 1.0);
        for scale in [1e-3, 1.0, 1e3] {
            let v: Vec<f64> = spike.iter().map(|x| x * scale).collect();
            assert_eq!(classify_vocab_effect(&v, t(f64::INFINITY)).class, VocabClass::Prediction);
        }
    }
}
