//! Plot-ready tables assembled from the outputs of the other subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::Run;
use crate::error::{Error, Result};
use crate::stats::{fmt_f64, quantile_sorted, METRICS};

const EXCESS_BINS: usize = 40;

struct Table {
    source: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            source: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::format("report input", format!("{} has no column {name:?}", self.source.display()))
        })
    }

    fn strings(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        self.strings(name)?
            .into_iter()
            .map(|s| match s {
                "" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                s => s
                    .parse()
                    .map_err(|_| Error::format("report input", format!("{s:?} in column {name:?} is not a number"))),
            })
            .collect()
    }
}

/// Finds `name` in `dir` or one level below it, in sorted order.
fn find(dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let mut hits = Vec::new();
    let direct = dir.join(name);
    if direct.is_file() {
        hits.push(direct);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    hits.extend(subdirs.into_iter().map(|d| d.join(name)).filter(|p| p.is_file()));
    Ok(hits)
}

fn label(input: &Path, path: &Path) -> String {
    let parent = path.parent().unwrap_or(input);
    match parent.strip_prefix(input) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
        _ => ".".into(),
    }
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1);
        counts[b as usize] += 1;
    }
    counts
}

fn finite_sorted(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub(super) fn report(input: &Path, out: &Path, argv: &[String], workers: usize) -> Result<()> {
    if !input.is_dir() {
        return Err(Error::Invalid(format!("{} is not a directory", input.display())));
    }
    let mut run = Run::begin(out, "report", argv, workers)?;
    run.input("in", input);
    run.commit()?;
    let mut emitted: BTreeMap<&str, Vec<String>> = BTreeMap::new();

    // Excess correlation: prefer multi-model tables, fall back to single runs.
    let mut uni = find(input, "universality.csv")?;
    if uni.is_empty() {
        uni = find(input, "summary.csv")?;
    }
    if !uni.is_empty() {
        let mut hist = run.csv("fig2_excess_hist.csv")?;
        hist.write_record(["source", "bin_lo", "bin_hi", "count", "universal"])?;
        let mut mm = run.csv("fig2_max_min.csv")?;
        mm.write_record(["source", "neuron", "layer", "excess", "max_max", "min_max", "is_universal"])?;
        for path in &uni {
            let t = Table::read(path)?;
            let src = label(input, path);
            let excess = t.numbers("excess")?;
            let flags: Vec<bool> = t.strings("is_universal")?.iter().map(|s| *s == "true").collect();
            let (max_max, min_max) = if t.col("max_max").is_ok() {
                (t.numbers("max_max")?, t.numbers("min_max")?)
            } else {
                let m = t.numbers("max_corr")?;
                (m.clone(), m)
            };
            let all = histogram(&excess, -2.0, 2.0, EXCESS_BINS);
            let univ: Vec<f64> = excess.iter().zip(&flags).filter(|(_, &f)| f).map(|(&e, _)| e).collect();
            let univ = histogram(&univ, -2.0, 2.0, EXCESS_BINS);
            for b in 0..EXCESS_BINS {
                let lo = -2.0 + 4.0 * b as f64 / EXCESS_BINS as f64;
                let hi = lo + 4.0 / EXCESS_BINS as f64;
                hist.write_record([src.clone(), fmt_f64(lo), fmt_f64(hi), all[b].to_string(), univ[b].to_string()])?;
            }
            let (ids, layers) = (t.strings("neuron")?, t.strings("layer")?);
            for i in 0..t.rows.len() {
                mm.write_record([
                    src.clone(),
                    ids[i].to_string(),
                    layers[i].to_string(),
                    fmt_f64(excess[i]),
                    fmt_f64(max_max[i]),
                    fmt_f64(min_max[i]),
                    flags[i].to_string(),
                ])?;
            }
        }
        hist.flush()?;
        mm.flush()?;
        emitted.insert("fig2", uni.iter().map(|p| p.display().to_string()).collect());
    }

    let depth = find(input, "depth.csv")?;
    if !depth.is_empty() {
        let mut w = run.csv("fig2_depth.csv")?;
        w.write_record(["source", "layer", "to_layer", "fraction"])?;
        for path in &depth {
            let t = Table::read(path)?;
            let src = label(input, path);
            for row in &t.rows {
                for (h, v) in t.header.iter().zip(row).skip(1) {
                    let to = h.strip_prefix("to_layer_").unwrap_or(h);
                    w.write_record([src.as_str(), row[0].as_str(), to, v.as_str()])?;
                }
            }
        }
        w.flush()?;
        emitted.insert("fig2_depth", depth.iter().map(|p| p.display().to_string()).collect());
    }

    let stats = find(input, "neuron_stats.csv")?;
    if !stats.is_empty() {
        let mut pct = run.csv("fig3_percentiles.csv")?;
        pct.write_record(["source", "layer", "metric", "group", "count", "q25", "median", "q75"])?;
        let mut sc = run.csv("fig8_sparsity_cos.csv")?;
        sc.write_record(["source", "neuron", "layer", "sparsity", "cos_in_out", "is_universal"])?;
        for path in &stats {
            let t = Table::read(path)?;
            let src = label(input, path);
            let layers: Vec<usize> = t.numbers("layer")?.iter().map(|&l| l as usize).collect();
            let flags = t.strings("is_universal")?;
            let n_layer = layers.iter().max().map_or(0, |l| l + 1);
            for metric in METRICS {
                let vals = t.numbers(&format!("{metric}_pct"))?;
                for layer in 0..n_layer {
                    for group in ["all", "universal"] {
                        let sel = finite_sorted((0..t.rows.len()).filter_map(|i| {
                            (layers[i] == layer && (group == "all" || flags[i] == "true")).then_some(vals[i])
                        }));
                        let q = |p: f64| if sel.is_empty() { f64::NAN } else { quantile_sorted(&sel, p) };
                        pct.write_record([
                            src.clone(),
                            layer.to_string(),
                            metric.to_string(),
                            group.to_string(),
                            sel.len().to_string(),
                            fmt_f64(q(0.25)),
                            fmt_f64(q(0.5)),
                            fmt_f64(q(0.75)),
                        ])?;
                    }
                }
            }
            let (ids, sparsity, cos) = (t.strings("neuron")?, t.numbers("sparsity")?, t.numbers("cos_in_out")?);
            for i in 0..t.rows.len() {
                sc.write_record([
                    src.clone(),
                    ids[i].to_string(),
                    layers[i].to_string(),
                    fmt_f64(sparsity[i]),
                    fmt_f64(cos[i]),
                    flags[i].to_string(),
                ])?;
            }
        }
        pct.flush()?;
        sc.flush()?;
        emitted.insert("fig3_fig8", stats.iter().map(|p| p.display().to_string()).collect());
    }

    let vocab = find(input, "vocab_effects.csv")?;
    if !vocab.is_empty() {
        let mut m = run.csv("fig5_vocab_moments.csv")?;
        m.write_record(["source", "neuron", "layer", "logit_skew", "logit_kurt", "logit_var", "class"])?;
        let mut c = run.csv("fig5_class_counts.csv")?;
        c.write_record(["source", "layer", "class", "count"])?;
        for path in &vocab {
            let t = Table::read(path)?;
            let src = label(input, path);
            let (ids, layers, classes) = (t.strings("neuron")?, t.strings("layer")?, t.strings("class")?);
            let (skew, kurt, var) = (t.numbers("logit_skew")?, t.numbers("logit_kurt")?, t.numbers("logit_var")?);
            let mut counts: BTreeMap<(usize, &str), usize> = BTreeMap::new();
            for i in 0..t.rows.len() {
                m.write_record([
                    src.clone(),
                    ids[i].to_string(),
                    layers[i].to_string(),
                    fmt_f64(skew[i]),
                    fmt_f64(kurt[i]),
                    fmt_f64(var[i]),
                    classes[i].to_string(),
                ])?;
                let layer = layers[i].parse().unwrap_or(usize::MAX);
                *counts.entry((layer, classes[i])).or_default() += 1;
            }
            for ((layer, class), n) in counts {
                c.write_record([src.clone(), layer.to_string(), class.to_string(), n.to_string()])?;
            }
        }
        m.flush()?;
        c.flush()?;
        emitted.insert("fig5", vocab.iter().map(|p| p.display().to_string()).collect());
    }

    let entropy = find(input, "entropy_grid.csv")?;
    if !entropy.is_empty() {
        const COLS: [&str; 7] = [
            "ln_scale",
            "entropy",
            "loss",
            "true_rank",
            "reciprocal_rank",
            "rr_shift",
            "argmax_changed",
        ];
        let mut w = run.csv("fig6_entropy.csv")?;
        let mut header = vec!["source", "role", "value", "neurons"];
        header.extend(COLS);
        w.write_record(&header)?;
        for path in &entropy {
            let t = Table::read(path)?;
            let src = label(input, path);
            let (roles, values) = (t.strings("role")?, t.strings("value")?);
            let cols = COLS.iter().map(|c| t.numbers(c)).collect::<Result<Vec<_>>>()?;
            // Keyed by first appearance so the grid order is kept.
            let mut order: Vec<(&str, &str)> = Vec::new();
            let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
            for i in 0..t.rows.len() {
                let key = (roles[i], values[i]);
                let g = groups.entry(key).or_default();
                if g.is_empty() {
                    order.push(key);
                }
                g.push(i);
            }
            for key in order {
                let idx = &groups[&key];
                let mut rec = vec![src.clone(), key.0.to_string(), key.1.to_string(), idx.len().to_string()];
                for c in &cols {
                    rec.push(fmt_f64(idx.iter().map(|&i| c[i]).sum::<f64>() / idx.len() as f64));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        emitted.insert("fig6", entropy.iter().map(|p| p.display().to_string()).collect());
    }

    let ablation = find(input, "path_ablation.csv")?;
    if !ablation.is_empty() {
        let mut w = run.csv("fig7_path_ablation.csv")?;
        w.write_record(["source", "activation", "delta_bos_attn", "delta_out_norm"])?;
        for path in &ablation {
            let t = Table::read(path)?;
            let src = label(input, path);
            let (a, d, n) = (t.numbers("activation")?, t.numbers("delta_bos_attn")?, t.numbers("delta_out_norm")?);
            for i in 0..t.rows.len() {
                w.write_record([src.clone(), fmt_f64(a[i]), fmt_f64(d[i]), fmt_f64(n[i])])?;
            }
        }
        w.flush()?;
        drop(w);
        let mut w = run.csv("fig7_bos_scores.csv")?;
        w.write_record(["source", "kind", "score"])?;
        for path in &ablation {
            let dir = path.parent().unwrap_or(input);
            let src = label(input, path);
            for (file, kind) in [("bos_scores.csv", "neuron"), ("bos_baseline.csv", "random")] {
                let p = dir.join(file);
                if p.is_file() {
                    for s in Table::read(&p)?.numbers("score")? {
                        w.write_record([src.as_str(), kind, fmt_f64(s).as_str()])?;
                    }
                }
            }
        }
        w.flush()?;
        emitted.insert("fig7", ablation.iter().map(|p| p.display().to_string()).collect());
    }

    if emitted.is_empty() {
        return Err(Error::Invalid(format!(
            "{} holds no recognised analysis outputs",
            input.display()
        )));
    }
    run.json("report.json", &json!({ "figures": emitted }))?;
    run.finish()
}
