use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Command, EntropyArgs, Run, TokenArgs, TokenCounts};
use crate::corr::{
    correlate_models, depth_specialization, summarize_universality, ComparisonMax, CorrelateOptions, LayerMap,
    RotationBaseline,
};
use crate::error::{Error, Result};
use crate::ids::{HeadId, NeuronId};
use crate::interventions::{
    bos_scores_for_heads, bos_value_norm_ratio, entropy_intervention, path_ablation, select_controls, GridPoint,
};
use crate::model::{preprocess, ModelWeights, NeuronSide};
use crate::stats::{activation_moments, fmt_f64, join_summaries, weight_summaries, write_summary_csv};
use crate::taxonomy::{
    classify_moments, generate_labels, generate_suite, nearest_weight_neighbor, position_mutual_information,
    reduction_in_variance, variance_cutoff, LabelTest, VocabClass, VocabMeta, VocabThresholds, WeightBasis,
};
use crate::tensor_io::{read_token_stream, write_tensor, ExclusionConfig, MaskedTokens, TensorFile, TokenStream};

pub(super) fn dispatch(cmd: Command, argv: &[String], workers: usize) -> Result<()> {
    match cmd {
        Command::Correlate {
            model_a,
            model_b,
            tokens,
            baseline_seed,
            tile_size,
            threshold,
            save_matrix,
            out,
        } => correlate(
            &model_a,
            &model_b,
            &tokens,
            baseline_seed,
            tile_size,
            threshold,
            save_matrix,
            &out,
            argv,
            workers,
        ),
        Command::Universality { corr, threshold, out } => universality(&corr, threshold, &out, argv, workers),
        Command::Stats {
            model,
            tokens,
            universality,
            out,
        } => stats(&model, &tokens, universality.as_deref(), &out, argv, workers),
        Command::Explain {
            model,
            tokens,
            tests,
            vocab,
            act_bins,
            pos_bins,
            out,
        } => explain(&model, &tokens, &tests, vocab, act_bins, pos_bins, &out, argv, workers),
        Command::Suite {
            vocab,
            tokens,
            top_k,
            out,
        } => suite(&vocab, &tokens, top_k, &out, argv, workers),
        Command::VocabEffects {
            model,
            kurtosis_threshold,
            variance_quantile,
            out,
        } => vocab_effects(&model, kurtosis_threshold, variance_quantile, &out, argv, workers),
        Command::InterveneEntropy(args) => intervene_entropy(&args, argv, workers),
        Command::AblateBos {
            model,
            tokens,
            neuron,
            head,
            samples,
            bos,
            baseline_directions,
            seed,
            out,
        } => ablate_bos(
            &model,
            &tokens,
            neuron,
            head,
            samples,
            bos,
            baseline_directions,
            seed,
            &out,
            argv,
            workers,
        ),
        Command::Report { input, out } => super::report::report(&input, &out, argv, workers),
    }
}

/// Loads a model directory and brings it into preprocessed form.
pub(super) fn load_model(dir: &Path) -> Result<ModelWeights> {
    preprocess(&ModelWeights::load(dir)?)
}

fn load_tokens(args: &TokenArgs, d_vocab: usize) -> Result<(MaskedTokens, ExclusionConfig)> {
    let excl = match &args.exclusions {
        Some(p) => ExclusionConfig::load(p)?,
        None => ExclusionConfig::default(),
    };
    let set = excl.to_set();
    set.check_vocab(d_vocab)?;
    Ok((read_token_stream(&args.tokens, &set, Some(d_vocab))?, excl))
}

fn counts(t: &MaskedTokens) -> TokenCounts {
    TokenCounts {
        total: t.stream.total_tokens(),
        valid: t.valid_count(),
        windows: t.stream.windows().len(),
    }
}

fn record_tokens(run: &mut Run, args: &TokenArgs, toks: &MaskedTokens) {
    run.input("tokens", &args.tokens);
    if let Some(e) = &args.exclusions {
        run.input("exclusions", e);
    }
    run.manifest.tokens = Some(counts(toks));
}

fn dims(m: &ModelWeights) -> serde_json::Value {
    let c = &m.config;
    json!({
        "n_layer": c.n_layer,
        "n_head": c.n_head,
        "d_model": c.d_model,
        "d_mlp": c.d_mlp,
        "d_vocab": c.d_vocab,
        "n_ctx": c.n_ctx,
    })
}

fn opt_id<T: ToString>(x: Option<T>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

#[allow(clippy::too_many_arguments)]
fn correlate(
    model_a: &Path,
    model_b: &Path,
    tokens: &TokenArgs,
    seed: u64,
    tile_size: usize,
    threshold: f64,
    save_matrix: bool,
    out: &Path,
    argv: &[String],
    workers: usize,
) -> Result<()> {
    let mut run = Run::begin(out, "correlate", argv, workers)?;
    let a = load_model(model_a)?;
    let same_dir = matches!(
        (model_a.canonicalize(), model_b.canonicalize()),
        (Ok(x), Ok(y)) if x == y
    );
    let b_owned = if same_dir { None } else { Some(load_model(model_b)?) };
    let b = b_owned.as_ref().unwrap_or(&a);
    if a.config.d_vocab != b.config.d_vocab {
        return Err(Error::Invalid(format!(
            "models disagree on vocabulary size ({} vs {})",
            a.config.d_vocab, b.config.d_vocab
        )));
    }
    let (toks, excl) = load_tokens(tokens, a.config.d_vocab)?;
    run.input("model_a", model_a).input("model_b", model_b);
    record_tokens(&mut run, tokens, &toks);
    run.seed("baseline", seed).threshold("excess", threshold);
    run.commit()?;

    let rotation = RotationBaseline::gaussian(b.config.n_layer, b.config.d_mlp, seed);
    let opts = CorrelateOptions {
        tile_size,
        batch_windows: tokens.batch_windows,
    };
    let res = correlate_models(&a, b, &toks, &rotation, opts)?;
    let corr = res.corr.finalize()?;
    let base = res.baseline.finalize()?;
    let cm = ComparisonMax::from_matrices(corr.view(), base.view())?;
    let records = summarize_universality(std::slice::from_ref(&cm), threshold)?;

    let (da, db) = (a.config.d_mlp, b.config.d_mlp);
    let mut w = run.csv("summary.csv")?;
    w.write_record(["neuron", "layer", "index", "max_corr", "argmax", "baseline_max", "excess", "is_universal"])?;
    for r in &records {
        let id = NeuronId::from_flat(r.neuron, da);
        w.write_record([
            id.to_string(),
            id.layer.to_string(),
            id.index.to_string(),
            fmt_f64(r.max_corr[0]),
            opt_id(r.argmax[0].map(|j| NeuronId::from_flat(j, db))),
            fmt_f64(r.baseline_max[0]),
            fmt_f64(r.excess),
            r.is_universal.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);

    let ex: BTreeSet<u32> = excl.to_set().ids().collect();
    run.json(
        "metadata.json",
        &json!({
            "reference": { "dir": model_a.display().to_string(), "dims": dims(&a) },
            "comparison": { "dir": model_b.display().to_string(), "dims": dims(b) },
            "baseline_seed": seed,
            "baseline_scope": "global",
            "activation": "post",
            "threshold": threshold,
            "tile_size": tile_size,
            "batch_windows": tokens.batch_windows,
            "tokens": { "total": res.total_tokens, "valid": res.valid_tokens, "windows": res.windows },
            "excluded_ids": ex,
            "universal": records.iter().filter(|r| r.is_universal).count(),
        }),
    )?;
    if save_matrix {
        for (name, m) in [("corr.bin", &corr), ("baseline.bin", &base)] {
            let t = TensorFile::from_array(m.mapv(|x| x as f32).view())?;
            write_tensor(&t, run.path(name))?;
            run.manifest.outputs.push(name.into());
        }
    }
    run.finish()
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    neuron: String,
    max_corr: f64,
    argmax: String,
    baseline_max: f64,
}

#[derive(Debug, Deserialize)]
struct CorrMetadata {
    reference: ModelRef,
    comparison: ModelRef,
}

#[derive(Debug, Deserialize)]
struct ModelRef {
    dir: String,
    dims: Dims,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
struct Dims {
    n_layer: usize,
    d_mlp: usize,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_comparison(dir: &Path) -> Result<(CorrMetadata, ComparisonMax)> {
    let meta: CorrMetadata = read_json(&dir.join("metadata.json"))?;
    let path = dir.join("summary.csv");
    let mut rdr = csv::Reader::from_path(&path)?;
    let n = meta.reference.dims.n_layer * meta.reference.dims.d_mlp;
    let (mut max, mut argmax, mut baseline) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<SummaryRow>().enumerate() {
        let row = row?;
        let id: NeuronId = row.neuron.parse()?;
        if id.flat(meta.reference.dims.d_mlp) != i {
            return Err(Error::format("correlation summary", format!("row {i} is neuron {id}")));
        }
        max.push(row.max_corr);
        baseline.push(row.baseline_max);
        argmax.push(if row.argmax.is_empty() {
            None
        } else {
            Some(row.argmax.parse::<NeuronId>()?.flat(meta.comparison.dims.d_mlp))
        });
    }
    if max.len() != n {
        return Err(Error::format(
            "correlation summary",
            format!("{} has {} rows, expected {n}", path.display(), max.len()),
        ));
    }
    Ok((
        meta,
        ComparisonMax {
            max,
            argmax,
            baseline_max: baseline,
        },
    ))
}

fn universality(dirs: &[PathBuf], threshold: f64, out: &Path, argv: &[String], workers: usize) -> Result<()> {
    let mut run = Run::begin(out, "universality", argv, workers)?;
    for (i, d) in dirs.iter().enumerate() {
        run.input(&format!("corr_{i}"), d);
    }
    run.threshold("excess", threshold);
    run.commit()?;
    let loaded = dirs.iter().map(|d| read_comparison(d)).collect::<Result<Vec<_>>>()?;
    let (first, _) = &loaded[0];
    let (rdims, cdims) = (first.reference.dims, first.comparison.dims);
    for (m, _) in &loaded {
        if m.reference.dims != rdims {
            return Err(Error::Shape("correlate runs use different reference models".into()));
        }
        if m.comparison.dims != cdims {
            return Err(Error::Shape("comparison models differ in shape; depth maps need one layout".into()));
        }
    }
    let comps: Vec<ComparisonMax> = loaded.iter().map(|(_, c)| c.clone()).collect();
    let records = summarize_universality(&comps, threshold)?;
    let depth = depth_specialization(
        &records,
        LayerMap::new(rdims.n_layer, rdims.d_mlp),
        LayerMap::new(cdims.n_layer, cdims.d_mlp),
    )?;

    let mut w = run.csv("universality.csv")?;
    let mut header: Vec<String> = [
        "neuron",
        "layer",
        "index",
        "mean_max",
        "mean_baseline",
        "excess",
        "max_max",
        "min_max",
        "is_universal",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in 0..comps.len() {
        header.extend([format!("max_corr_{m}"), format!("argmax_{m}"), format!("baseline_max_{m}")]);
    }
    w.write_record(&header)?;
    for r in &records {
        let id = NeuronId::from_flat(r.neuron, rdims.d_mlp);
        let mut rec = vec![
            id.to_string(),
            id.layer.to_string(),
            id.index.to_string(),
            fmt_f64(r.mean_max),
            fmt_f64(r.mean_baseline),
            fmt_f64(r.excess),
            fmt_f64(r.max_max),
            fmt_f64(r.min_max),
            r.is_universal.to_string(),
        ];
        for m in 0..comps.len() {
            rec.push(fmt_f64(r.max_corr[m]));
            rec.push(opt_id(r.argmax[m].map(|j| NeuronId::from_flat(j, cdims.d_mlp))));
            rec.push(fmt_f64(r.baseline_max[m]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);

    let mut w = run.csv("depth.csv")?;
    let mut header = vec!["layer".to_string()];
    header.extend((0..cdims.n_layer).map(|l| format!("to_layer_{l}")));
    w.write_record(&header)?;
    for (l, row) in depth.outer_iter().enumerate() {
        let mut rec = vec![l.to_string()];
        rec.extend(row.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);

    let n_universal = records.iter().filter(|r| r.is_universal).count();
    run.json(
        "metadata.json",
        &json!({
            "threshold": threshold,
            "comparisons": loaded.iter().map(|(m, _)| m.comparison.dir.clone()).collect::<Vec<_>>(),
            "reference": first.reference.dir,
            "neurons": records.len(),
            "universal": n_universal,
            "universal_fraction": n_universal as f64 / records.len() as f64,
        }),
    )?;
    run.finish()
}

fn read_universal_flags(path: &Path, n_layer: usize, d_mlp: usize) -> Result<Vec<bool>> {
    #[derive(Deserialize)]
    struct Row {
        neuron: String,
        is_universal: bool,
    }
    let mut flags = vec![None; n_layer * d_mlp];
    let mut rdr = csv::Reader::from_path(path)?;
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let id: NeuronId = row.neuron.parse()?;
        if id.layer >= n_layer || id.index >= d_mlp {
            return Err(Error::OutOfBounds(format!("{} lists neuron {id}", path.display())));
        }
        flags[id.flat(d_mlp)] = Some(row.is_universal);
    }
    flags
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            f.ok_or_else(|| {
                Error::format(
                    "universality table",
                    format!("no row for neuron {}", NeuronId::from_flat(i, d_mlp)),
                )
            })
        })
        .collect()
}

fn stats(
    model: &Path,
    tokens: &TokenArgs,
    universality: Option<&Path>,
    out: &Path,
    argv: &[String],
    workers: usize,
) -> Result<()> {
    let mut run = Run::begin(out, "stats", argv, workers)?;
    let m = load_model(model)?;
    let (toks, _) = load_tokens(tokens, m.config.d_vocab)?;
    run.input("model", model);
    record_tokens(&mut run, tokens, &toks);
    if let Some(u) = universality {
        run.input("universality", u);
    }
    run.commit()?;
    let flags = universality
        .map(|p| read_universal_flags(p, m.config.n_layer, m.config.d_mlp))
        .transpose()?;
    let moments = activation_moments(&m, &toks, tokens.batch_windows)?.finalize()?;
    let weights = weight_summaries(&m);
    let rows = join_summaries(&weights, Some(&moments), flags.as_deref())?;
    write_summary_csv(&rows, run.raw("neuron_stats.csv")?)?;
    run.json(
        "metadata.json",
        &json!({
            "model": dims(&m),
            "activation_side": "pre",
            "kurtosis": "non-excess (Gaussian = 3)",
            "sparsity": "fraction of tokens with positive activation",
            "percentile": "share of same-layer neurons strictly below, times 100",
            "tokens": counts(&toks),
        }),
    )?;
    run.finish()
}

/// Post-activations of every neuron for every token, in stream order.
fn all_activations(m: &ModelWeights, stream: &TokenStream) -> Result<Array2<f32>> {
    let windows = stream.windows();
    let parts = windows
        .par_iter()
        .map(|w| m.neuron_activations(w.tokens, NeuronSide::Post, &[]))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Err(Error::Invalid("token stream is empty".into()));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("equal widths"))
}

#[allow(clippy::too_many_arguments)]
fn explain(
    model: &Path,
    tokens: &TokenArgs,
    tests_path: &Path,
    vocab: Option<PathBuf>,
    act_bins: usize,
    pos_bins: usize,
    out: &Path,
    argv: &[String],
    workers: usize,
) -> Result<()> {
    let mut run = Run::begin(out, "explain", argv, workers)?;
    let m = load_model(model)?;
    let (toks, _) = load_tokens(tokens, m.config.d_vocab)?;
    let vocab_path = vocab.unwrap_or_else(|| model.join("vocab.json"));
    run.input("model", model).input("tests", tests_path).input("vocab", &vocab_path);
    record_tokens(&mut run, tokens, &toks);
    run.threshold("act_bins", act_bins as f64).threshold("pos_bins", pos_bins as f64);
    run.commit()?;

    let vocab = VocabMeta::load(&vocab_path)?;
    if vocab.len() != m.config.d_vocab {
        return Err(Error::Shape(format!(
            "vocabulary lists {} tokens, model has {}",
            vocab.len(),
            m.config.d_vocab
        )));
    }
    let mut tests: Vec<LabelTest> = read_json(tests_path)?;
    let base = tests_path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    for t in &mut tests {
        if !seen.insert(t.id.clone()) {
            return Err(Error::Invalid(format!("duplicate test id {:?}", t.id)));
        }
        t.spec.resolve_paths(base);
    }
    let labels = tests
        .iter()
        .map(|t| generate_labels(&t.spec, &toks.stream, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let acts = all_activations(&m, &toks.stream)?;
    let d_mlp = m.config.d_mlp;

    let per_neuron = (0..acts.ncols())
        .into_par_iter()
        .map(|j| -> Result<Vec<crate::taxonomy::RivResult>> {
            let col: Vec<f64> = acts.column(j).iter().map(|&x| f64::from(x)).collect();
            labels
                .iter()
                .map(|l| reduction_in_variance(&col, l.as_slice(), Some(&toks.mask)))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = run.csv("explanations.csv")?;
    w.write_record(["neuron", "test", "riv", "beta", "var_neg", "var_pos", "degenerate"])?;
    let mut best = run.csv("best_explanations.csv")?;
    best.write_record(["neuron", "test", "riv", "beta"])?;
    for (j, results) in per_neuron.iter().enumerate() {
        let id = NeuronId::from_flat(j, d_mlp).to_string();
        let mut top: Option<(usize, f64)> = None;
        for (k, r) in results.iter().enumerate() {
            w.write_record([
                id.clone(),
                tests[k].id.clone(),
                fmt_f64(r.score),
                fmt_f64(r.beta),
                fmt_f64(r.var_neg),
                fmt_f64(r.var_pos),
                r.degenerate.to_string(),
            ])?;
            if !r.score.is_nan() && top.is_none_or(|(_, s)| r.score > s) {
                top = Some((k, r.score));
            }
        }
        if let Some((k, s)) = top {
            best.write_record([id, tests[k].id.clone(), fmt_f64(s), fmt_f64(results[k].beta)])?;
        }
    }
    w.flush()?;
    best.flush()?;
    drop((w, best));

    // Position information over full-length windows only.
    let ctx = toks.stream.context_length as usize;
    let full: Vec<_> = toks.stream.windows().into_iter().filter(|w| w.tokens.len() == ctx).collect();
    let mut skipped = None;
    if full.len() < act_bins || ctx < pos_bins {
        skipped = Some(format!(
            "{} full windows of {ctx} positions cannot fill {act_bins} x {pos_bins} bins",
            full.len()
        ));
    } else {
        let mask = Array2::from_shape_fn((full.len(), ctx), |(i, p)| toks.mask[full[i].offset + p]);
        let results = (0..acts.ncols())
            .into_par_iter()
            .map(|j| {
                let a = Array2::from_shape_fn((full.len(), ctx), |(i, p)| f64::from(acts[[full[i].offset + p, j]]));
                position_mutual_information(a.view(), Some(mask.view()), act_bins, pos_bins)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut w = run.csv("position_mi.csv")?;
        w.write_record(["neuron", "mi", "max_mi"])?;
        let cap = (act_bins.min(pos_bins) as f64).ln();
        for (j, r) in results.iter().enumerate() {
            w.write_record([NeuronId::from_flat(j, d_mlp).to_string(), fmt_f64(r.mi), fmt_f64(cap)])?;
        }
        w.flush()?;
        drop(w);
        let mut w = run.csv("position_profile.csv")?;
        w.write_record(["neuron", "position", "mean", "std"])?;
        for (j, r) in results.iter().enumerate() {
            let id = NeuronId::from_flat(j, d_mlp).to_string();
            for (p, prof) in r.profile.iter().enumerate() {
                w.write_record([id.clone(), p.to_string(), fmt_f64(prof.mean), fmt_f64(prof.std)])?;
            }
        }
        w.flush()?;
    }
    run.json(
        "metadata.json",
        &json!({
            "model": dims(&m),
            "activation_side": "post",
            "tests": tests.len(),
            "act_bins": act_bins,
            "pos_bins": pos_bins,
            "position_mi_skipped": skipped,
            "degenerate_rule": "a label class with fewer than 2 tokens contributes variance 0",
        }),
    )?;
    run.finish()
}

fn suite(vocab: &Path, tokens: &Path, top_k: usize, out: &Path, argv: &[String], workers: usize) -> Result<()> {
    let mut run = Run::begin(out, "suite", argv, workers)?;
    run.input("vocab", vocab).input("tokens", tokens);
    run.commit()?;
    let v = VocabMeta::load(vocab)?;
    let toks = read_token_stream(tokens, &Default::default(), Some(v.len()))?;
    let tests = generate_suite(&v, &toks.stream, top_k);
    run.json("tests.json", &tests)?;
    run.finish()
}

fn vocab_effects(
    model: &Path,
    kurtosis: f64,
    quantile: f64,
    out: &Path,
    argv: &[String],
    workers: usize,
) -> Result<()> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Invalid(format!("variance quantile {quantile} is outside [0, 1]")));
    }
    let mut run = Run::begin(out, "vocab-effects", argv, workers)?;
    run.input("model", model);
    run.threshold("kurtosis", kurtosis).threshold("variance_quantile", quantile);
    run.commit()?;
    let m = load_model(model)?;
    let c = &m.config;
    let summaries = weight_summaries(&m);
    let cutoffs: Vec<f64> = (0..c.n_layer)
        .map(|l| {
            let v: Vec<f64> = summaries[l * c.d_mlp..(l + 1) * c.d_mlp].iter().map(|s| s.logit_var).collect();
            variance_cutoff(&v, quantile)
        })
        .collect();
    let mut class_counts: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut w = run.csv("vocab_effects.csv")?;
    w.write_record([
        "neuron",
        "layer",
        "index",
        "logit_var",
        "logit_skew",
        "logit_kurt",
        "vocab_var",
        "vocab_skew",
        "vocab_kurt",
        "variance_cutoff",
        "class",
    ])?;
    for s in &summaries {
        let t = VocabThresholds {
            kurtosis,
            variance_cutoff: cutoffs[s.neuron.layer],
        };
        let class = classify_moments(s.logit_var, s.logit_skew, s.logit_kurt, t).class;
        *class_counts.entry(s.neuron.layer).or_default().entry(class.as_str()).or_default() += 1;
        w.write_record([
            s.neuron.to_string(),
            s.neuron.layer.to_string(),
            s.neuron.index.to_string(),
            fmt_f64(s.logit_var),
            fmt_f64(s.logit_skew),
            fmt_f64(s.logit_kurt),
            fmt_f64(s.vocab_var),
            fmt_f64(s.vocab_skew),
            fmt_f64(s.vocab_kurt),
            fmt_f64(t.variance_cutoff),
            class.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);

    let inp = nearest_weight_neighbor(&m, WeightBasis::Input);
    let outp = nearest_weight_neighbor(&m, WeightBasis::Output);
    let mut w = run.csv("weight_neighbors.csv")?;
    w.write_record([
        "neuron",
        "in_max_cos",
        "in_argmax",
        "in_min_cos",
        "in_argmin",
        "out_max_cos",
        "out_argmax",
        "out_min_cos",
        "out_argmin",
    ])?;
    for (a, b) in inp.iter().zip(&outp) {
        w.write_record([
            a.neuron.to_string(),
            fmt_f64(a.max_cos),
            opt_id(a.argmax),
            fmt_f64(a.min_cos),
            opt_id(a.argmin),
            fmt_f64(b.max_cos),
            opt_id(b.argmax),
            fmt_f64(b.min_cos),
            opt_id(b.argmin),
        ])?;
    }
    w.flush()?;
    drop(w);
    let all_classes = [VocabClass::Prediction, VocabClass::Suppression, VocabClass::Partition, VocabClass::None];
    run.json(
        "metadata.json",
        &json!({
            "model": dims(&m),
            "effect": "W_U^T w_out on the preprocessed model",
            "kurtosis_threshold": kurtosis,
            "variance_quantile": quantile,
            "variance_cutoffs": cutoffs,
            "classes": all_classes.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            "class_counts": class_counts,
        }),
    )?;
    run.finish()
}

#[derive(Serialize)]
struct EntropyReport<'a> {
    grid: &'a [f32],
    target: crate::interventions::EntropyExperimentResult,
    controls: Vec<crate::interventions::EntropyExperimentResult>,
}

fn grid_record(neuron: NeuronId, role: &str, p: &GridPoint) -> Vec<String> {
    vec![
        neuron.to_string(),
        role.to_string(),
        p.value.map_or("clean".to_string(), |v| v.to_string()),
        fmt_f64(p.ln_scale),
        fmt_f64(p.entropy),
        fmt_f64(p.loss),
        fmt_f64(p.true_rank),
        fmt_f64(p.reciprocal_rank),
        fmt_f64(p.rr_shift),
        fmt_f64(p.argmax_changed),
    ]
}

fn intervene_entropy(args: &EntropyArgs, argv: &[String], workers: usize) -> Result<()> {
    let mut run = Run::begin(&args.out, "intervene-entropy", argv, workers)?;
    let m = load_model(&args.model)?;
    let (toks, _) = load_tokens(&args.tokens, m.config.d_vocab)?;
    run.input("model", &args.model);
    record_tokens(&mut run, &args.tokens, &toks);
    run.seed("controls", args.seed);
    run.commit()?;
    let target = entropy_intervention(&m, &toks, args.neuron, &args.grid.0)?;
    let summaries = weight_summaries(&m);
    let picked = select_controls(&summaries, m.config.n_layer, args.controls, args.seed, &[args.neuron]);
    let controls = picked
        .iter()
        .map(|&n| entropy_intervention(&m, &toks, n, &args.grid.0))
        .collect::<Result<Vec<_>>>()?;

    let mut w = run.csv("entropy_grid.csv")?;
    w.write_record([
        "neuron",
        "role",
        "value",
        "ln_scale",
        "entropy",
        "loss",
        "true_rank",
        "reciprocal_rank",
        "rr_shift",
        "argmax_changed",
    ])?;
    for (role, r) in std::iter::once(("target", &target)).chain(controls.iter().map(|c| ("control", c))) {
        w.write_record(grid_record(r.neuron, role, &r.clean))?;
        for p in &r.points {
            w.write_record(grid_record(r.neuron, role, p))?;
        }
    }
    w.flush()?;
    drop(w);
    run.json(
        "entropy.json",
        &EntropyReport {
            grid: &args.grid.0,
            target,
            controls,
        },
    )?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn ablate_bos(
    model: &Path,
    tokens: &TokenArgs,
    neuron: NeuronId,
    head: HeadId,
    samples: usize,
    bos: Option<u32>,
    n_baseline: usize,
    seed: u64,
    out: &Path,
    argv: &[String],
    workers: usize,
) -> Result<()> {
    let mut run = Run::begin(out, "ablate-bos", argv, workers)?;
    let m = load_model(model)?;
    let (toks, excl) = load_tokens(tokens, m.config.d_vocab)?;
    let bos = bos.or(excl.bos_token()).ok_or_else(|| {
        Error::Invalid("no BOS token: pass --bos or list one under \"bos\" in the exclusions".into())
    })?;
    if bos as usize >= m.config.d_vocab {
        return Err(Error::TokenOutOfRange {
            id: bos,
            d_vocab: m.config.d_vocab,
        });
    }
    run.input("model", model);
    record_tokens(&mut run, tokens, &toks);
    run.seed("samples", seed).seed("baseline_directions", seed);
    run.commit()?;

    let ablation = path_ablation(&m, &toks, neuron, head, samples, seed)?;
    let scores = bos_scores_for_heads(&m, &[head], bos, n_baseline, seed)?;
    let ratios = bos_value_norm_ratio(&m, &toks, bos)?;
    let h_n = scores.scores.iter().find(|s| s.neuron == neuron).map(|s| s.score);

    let mut w = run.csv("path_ablation.csv")?;
    w.write_record([
        "window",
        "position",
        "activation",
        "bos_attn_clean",
        "bos_attn_ablated",
        "delta_bos_attn",
        "out_norm_clean",
        "out_norm_ablated",
        "delta_out_norm",
    ])?;
    for s in &ablation.samples {
        w.write_record([
            s.window.to_string(),
            s.position.to_string(),
            fmt_f64(s.activation),
            fmt_f64(s.bos_attn_clean),
            fmt_f64(s.bos_attn_ablated),
            fmt_f64(s.delta_bos_attn),
            fmt_f64(s.out_norm_clean),
            fmt_f64(s.out_norm_ablated),
            fmt_f64(s.delta_out_norm),
        ])?;
    }
    w.flush()?;
    drop(w);
    let mut w = run.csv("bos_scores.csv")?;
    w.write_record(["neuron", "head", "score"])?;
    for s in &scores.scores {
        w.write_record([s.neuron.to_string(), s.head.to_string(), fmt_f64(s.score)])?;
    }
    w.flush()?;
    drop(w);
    let mut w = run.csv("bos_baseline.csv")?;
    w.write_record(["head", "direction", "score"])?;
    for b in &scores.baselines {
        for (i, s) in b.scores.iter().enumerate() {
            w.write_record([b.head.to_string(), i.to_string(), fmt_f64(*s)])?;
        }
    }
    w.flush()?;
    drop(w);
    let mut w = run.csv("value_norms.csv")?;
    w.write_record(["head", "bos_norm", "mean_other_norm", "ratio"])?;
    for h in &ratios.heads {
        w.write_record([
            h.head.to_string(),
            fmt_f64(h.bos_norm),
            fmt_f64(h.mean_other_norm),
            h.ratio.map_or("inf".to_string(), fmt_f64),
        ])?;
    }
    w.flush()?;
    drop(w);
    run.json(
        "path_ablation.json",
        &json!({
            "neuron": neuron.to_string(),
            "head": head.to_string(),
            "bos_token": bos,
            "h_n": h_n,
            "value_norm_median": ratios.median,
            "result": ablation,
        }),
    )?;
    run.finish()
}
