use std::io::Write;

use super::moments::Moments;
use super::percentile::LayerPercentileTable;
use super::weights::WeightSummary;
use crate::error::{Error, Result};
use crate::ids::NeuronId;

/// Activation moments, weight metrics and an optional universality flag for
/// one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSummary {
    pub neuron: NeuronId,
    pub is_universal: Option<bool>,
    pub activation: Option<Moments>,
    pub weights: WeightSummary,
}

/// Metric columns in output order; every one also gets a `_pct` column.
pub const METRICS: &[&str] = &[
    "act_mean",
    "act_var",
    "act_skew",
    "act_kurt",
    "sparsity",
    "b_in",
    "w_in_norm",
    "w_out_norm",
    "cos_in_out",
    "weight_penalty",
    "vocab_var",
    "vocab_skew",
    "vocab_kurt",
    "logit_var",
    "logit_skew",
    "logit_kurt",
];

impl NeuronSummary {
    pub fn metric(&self, name: &str) -> f64 {
        let a = |f: fn(&Moments) -> f64| self.activation.as_ref().map_or(f64::NAN, f);
        let w = &self.weights;
        match name {
            "act_mean" => a(|m| m.mean),
            "act_var" => a(|m| m.variance),
            "act_skew" => a(|m| m.skew),
            "act_kurt" => a(|m| m.kurtosis),
            "sparsity" => a(|m| m.sparsity),
            "b_in" => w.b_in,
            "w_in_norm" => w.w_in_norm,
            "w_out_norm" => w.w_out_norm,
            "cos_in_out" => w.cos_in_out,
            "weight_penalty" => w.weight_penalty,
            "vocab_var" => w.vocab_var,
            "vocab_skew" => w.vocab_skew,
            "vocab_kurt" => w.vocab_kurt,
            "logit_var" => w.logit_var,
            "logit_skew" => w.logit_skew,
            "logit_kurt" => w.logit_kurt,
            _ => f64::NAN,
        }
    }
}

/// Joins the weight metrics with optional activation moments and flags, all
/// indexed by flat neuron id.
pub fn join_summaries(
    weights: &[WeightSummary],
    activation: Option<&[Moments]>,
    universal: Option<&[bool]>,
) -> Result<Vec<NeuronSummary>> {
    let n = weights.len();
    if activation.is_some_and(|a| a.len() != n) || universal.is_some_and(|u| u.len() != n) {
        return Err(Error::Shape("summary inputs cover different neuron counts".into()));
    }
    Ok(weights
        .iter()
        .enumerate()
        .map(|(i, w)| NeuronSummary {
            neuron: w.neuron,
            is_universal: universal.map(|u| u[i]),
            activation: activation.map(|a| a[i]),
            weights: *w,
        })
        .collect())
}

pub fn percentile_table(rows: &[NeuronSummary]) -> LayerPercentileTable {
    let mut t = LayerPercentileTable::new();
    let n_layer = rows.iter().map(|r| r.neuron.layer + 1).max().unwrap_or(0);
    for l in 0..n_layer {
        for m in METRICS {
            t.insert(l, m, rows.iter().filter(|r| r.neuron.layer == l).map(|r| r.metric(m)));
        }
    }
    t
}

/// Shortest round-trip float text; stable across runs.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

/// One row per neuron with every metric and its within-layer percentile.
pub fn write_summary_csv<W: Write>(rows: &[NeuronSummary], out: W) -> Result<()> {
    let table = percentile_table(rows);
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["neuron".to_string(), "layer".into(), "index".into(), "is_universal".into()];
    header.extend(METRICS.iter().map(|m| m.to_string()));
    header.extend(METRICS.iter().map(|m| format!("{m}_pct")));
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.neuron.to_string(),
            r.neuron.layer.to_string(),
            r.neuron.index.to_string(),
            r.is_universal.map_or(String::new(), |u| u.to_string()),
        ];
        rec.extend(METRICS.iter().map(|m| fmt_f64(r.metric(m))));
        for m in METRICS {
            rec.push(fmt_f64(table.percentile(r.neuron.layer, m, r.metric(m))?));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
