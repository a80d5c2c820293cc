use std::path::Path;
use std::process::{Command, Output};

use universal_neurons::synth::{self, random_model, random_tokens, unigram_detector_model};
use universal_neurons::tensor_io::write_token_stream;

fn unineurons(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unineurons"))
        .args(args)
        .env_remove("UNINEURONS_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = unineurons(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()).collect()
}

fn header(p: &Path) -> Vec<String> {
    csv::Reader::from_path(p).unwrap().headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(unineurons(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(unineurons(&[]).status.code(), Some(1));
    assert_eq!(unineurons(&["correlate", "--model-a", "x"]).status.code(), Some(1));
    assert_eq!(unineurons(&["--help"]).status.code(), Some(0));
    assert_eq!(unineurons(&["--version"]).status.code(), Some(0));
    let bad_grid = unineurons(&[
        "intervene-entropy", "--model", "m", "--tokens", "t", "--neuron", "L0.0", "--grid", "3,1", "--out", "o",
    ]);
    assert_eq!(bad_grid.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = unineurons(&["vocab-effects", "--model", s(&dir.path().join("nope")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    // The manifest exists even though the run failed.
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn zero_workers_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = unineurons(&["--workers", "0", "report", "--in", s(dir.path()), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn universality_flags_only_shared_detectors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let a_ids: Vec<u32> = (0..128).collect();
    let b_ids: Vec<u32> = [0, 1, 2].into_iter().chain(131..256).collect();
    unigram_detector_model(256, 64, &a_ids).save(p.join("a")).unwrap();
    unigram_detector_model(256, 64, &b_ids).save(p.join("b")).unwrap();
    write_token_stream(&random_tokens(320, 64, 256, 64, None, 5), p.join("tokens.bin")).unwrap();
    ok(&[
        "correlate", "--model-a", s(&p.join("a")), "--model-b", s(&p.join("b")), "--tokens",
        s(&p.join("tokens.bin")), "--baseline-seed", "3", "--out", s(&p.join("ab")),
    ]);
    ok(&["universality", "--corr", s(&p.join("ab")), "--out", s(&p.join("uni"))]);

    let rows = read_csv(&p.join("uni/universality.csv"));
    assert_eq!(rows.len(), 128);
    let flagged: Vec<&str> = rows.iter().filter(|r| &r[8] == "true").map(|r| r.get(0).unwrap()).collect();
    assert_eq!(flagged, ["L0.0", "L0.1", "L0.2"]);
    for r in &rows[..3] {
        let max: f64 = r[9].parse().unwrap();
        assert!((max - 1.0).abs() < 1e-6, "{r:?}");
    }
    let depth = read_csv(&p.join("uni/depth.csv"));
    assert_eq!(depth.len(), 1);
    assert_eq!(&depth[0][1], "1");
}

#[test]
fn duplicated_model_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = synth::config(2, 2, 16, 24, 40, 32);
    random_model(&cfg, 11).save(p.join("m")).unwrap();
    let vocab: Vec<String> = (0..40)
        .map(|i| match i % 4 {
            0 => format!("Ġw{i}"),
            1 => format!("x{i}"),
            2 => ",".into(),
            _ => format!("Ġ{}", (b'a' + (i % 26) as u8) as char),
        })
        .collect();
    std::fs::write(p.join("m/vocab.json"), serde_json::json!({ "tokens": vocab }).to_string()).unwrap();
    write_token_stream(&random_tokens(60, 50, 40, 32, Some(0), 2), p.join("t.bin")).unwrap();
    std::fs::write(p.join("excl.json"), r#"{"bos": [0]}"#).unwrap();
    let (m, t, e) = (p.join("m"), p.join("t.bin"), p.join("excl.json"));
    let common = ["--tokens", s(&t), "--exclusions", s(&e)];

    let mut args = vec!["correlate", "--model-a", s(&m), "--model-b", s(&m), "--save-matrix"];
    args.extend(common);
    let corr_out = p.join("runs/corr");
    args.extend(["--out", s(&corr_out)]);
    ok(&args);
    for r in read_csv(&corr_out.join("summary.csv")) {
        let max: f64 = r[3].parse().unwrap();
        assert!((max - 1.0).abs() < 1e-6, "{r:?}");
        assert_eq!(&r[0], &r[4]);
    }
    assert!(corr_out.join("corr.bin").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(corr_out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["tokens"]["total"], 3000);
    assert_eq!(manifest["tokens"]["valid"], 2940);

    ok(&["universality", "--corr", s(&corr_out), "--out", s(&p.join("runs/uni"))]);
    let depth = read_csv(&p.join("runs/uni/depth.csv"));
    assert_eq!(&depth[0][1], "1");
    assert_eq!(&depth[1][2], "1");

    let mut args = vec!["stats", "--model", s(&m), "--universality"];
    let uni_csv = p.join("runs/uni/universality.csv");
    args.push(s(&uni_csv));
    args.extend(common);
    let stats_out = p.join("runs/stats");
    args.extend(["--out", s(&stats_out)]);
    ok(&args);
    let stats = read_csv(&stats_out.join("neuron_stats.csv"));
    assert_eq!(stats.len(), 48);
    let flags: Vec<String> = read_csv(&uni_csv).iter().map(|r| r[8].to_string()).collect();
    let joined: Vec<String> = stats.iter().map(|r| r[3].to_string()).collect();
    assert_eq!(joined, flags);
    assert!(header(&stats_out.join("neuron_stats.csv")).contains(&"sparsity_pct".to_string()));

    ok(&["suite", "--vocab", s(&m.join("vocab.json")), "--tokens", s(&t), "--top-k", "5", "--out", s(&p.join("suite"))]);
    let tests = p.join("suite/tests.json");
    let mut args = vec!["explain", "--model", s(&m), "--tests", s(&tests), "--act-bins", "4", "--pos-bins", "8"];
    args.extend(common);
    let ex_out = p.join("runs/explain");
    args.extend(["--out", s(&ex_out)]);
    ok(&args);
    assert!(!read_csv(&ex_out.join("explanations.csv")).is_empty());
    assert_eq!(read_csv(&ex_out.join("position_mi.csv")).len(), 48);

    ok(&["vocab-effects", "--model", s(&m), "--out", s(&p.join("runs/vocab"))]);
    assert_eq!(read_csv(&p.join("runs/vocab/vocab_effects.csv")).len(), 48);
    assert_eq!(read_csv(&p.join("runs/vocab/weight_neighbors.csv")).len(), 48);

    let mut args = vec!["intervene-entropy", "--model", s(&m), "--neuron", "L1.3", "--grid", "0:4:3", "--controls", "4"];
    args.extend(common);
    let ent_out = p.join("runs/entropy");
    args.extend(["--out", s(&ent_out)]);
    ok(&args);
    // Target plus four controls, each with a clean row and three grid points.
    assert_eq!(read_csv(&ent_out.join("entropy_grid.csv")).len(), 20);

    let mut args = vec!["ablate-bos", "--model", s(&m), "--neuron", "L0.2", "--head", "L1.H1", "--samples", "10"];
    args.extend(common);
    let bos_out = p.join("runs/bos");
    args.extend(["--out", s(&bos_out), "--baseline-directions", "16"]);
    ok(&args);
    assert_eq!(read_csv(&bos_out.join("path_ablation.csv")).len(), 10);
    assert_eq!(read_csv(&bos_out.join("bos_baseline.csv")).len(), 16);

    ok(&["report", "--in", s(&p.join("runs")), "--out", s(&p.join("report"))]);
    for f in [
        "fig2_excess_hist.csv",
        "fig2_max_min.csv",
        "fig2_depth.csv",
        "fig3_percentiles.csv",
        "fig5_vocab_moments.csv",
        "fig5_class_counts.csv",
        "fig6_entropy.csv",
        "fig7_path_ablation.csv",
        "fig7_bos_scores.csv",
        "fig8_sparsity_cos.csv",
        "report.json",
    ] {
        assert!(p.join("report").join(f).is_file(), "{f} missing");
    }
}
