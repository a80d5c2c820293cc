use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Sorted per-(layer, metric) values for percentile lookup. NaN entries are
/// dropped at insertion.
#[derive(Debug, Clone, Default)]
pub struct LayerPercentileTable {
    tables: BTreeMap<(usize, String), Vec<f64>>,
}

impl LayerPercentileTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, metric: &str, values: impl IntoIterator<Item = f64>) {
        let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        self.tables.insert((layer, metric.to_string()), v);
    }

    pub fn values(&self, layer: usize, metric: &str) -> Option<&[f64]> {
        self.tables.get(&(layer, metric.to_string())).map(Vec::as_slice)
    }

    /// Percentage of same-layer values strictly below `value`. NaN in, NaN out.
    pub fn percentile(&self, layer: usize, metric: &str, value: f64) -> Result<f64> {
        let sorted = self
            .values(layer, metric)
            .ok_or_else(|| Error::OutOfBounds(format!("no percentile table for layer {layer}, metric {metric}")))?;
        if value.is_nan() || sorted.is_empty() {
            return Ok(f64::NAN);
        }
        let below = sorted.partition_point(|&x| x < value);
        Ok(below as f64 / sorted.len() as f64 * 100.0)
    }
}

/// Linearly interpolated quantile `q ∈ [0, 1]` of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Quantile of the non-NaN entries.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}
