use std::ffi::{CStr, CString};
use std::ptr;

use universal_neurons::corr::CorrState;
use universal_neurons::model::{preprocess, NeuronSide};
use universal_neurons::synth;
use universal_neurons::tensor_io::write_token_stream;
use universal_neurons_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(un_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(un_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { un_model_load(ptr::null(), &mut m) }, UnStatus::NullPointer);
    assert!(m.is_null());
    assert!(last_error().contains("dir"));
    let mut dims = UnModelDims::default();
    assert_eq!(unsafe { un_model_dims(ptr::null(), &mut dims) }, UnStatus::NullPointer);
    let mut out = UnMoments::default();
    assert_eq!(unsafe { un_moments(ptr::null(), 5, &mut out) }, UnStatus::NullPointer);
    // Freeing null is a no-op.
    unsafe {
        un_model_free(ptr::null_mut());
        un_corr_free(ptr::null_mut());
    }
}

#[test]
fn missing_model_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let path = cstr(&dir.path().join("absent"));
    assert_eq!(unsafe { un_model_load(path.as_ptr(), &mut m) }, UnStatus::Io);
    assert!(last_error().contains("config.json"));
}

#[test]
fn model_handle_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth::config(2, 2, 16, 12, 20, 16);
    let w = synth::random_model(&cfg, 4);
    w.save(dir.path()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { un_model_load(cstr(dir.path()).as_ptr(), &mut m) }, UnStatus::Ok);
    let mut dims = UnModelDims::default();
    assert_eq!(unsafe { un_model_dims(m, &mut dims) }, UnStatus::Ok);
    assert_eq!((dims.n_layer, dims.d_mlp, dims.d_vocab, dims.n_ctx), (2, 12, 20, 16));

    let tokens: Vec<u32> = (0..10).map(|i| (i * 7) % 20).collect();
    let mut out = vec![0f32; 10 * 24];
    let st = unsafe { un_model_neuron_activations(m, tokens.as_ptr(), 10, UnSide::Post as i32, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, UnStatus::Ok);
    let want = preprocess(&w).unwrap().neuron_activations(&tokens, NeuronSide::Post, &[]).unwrap();
    assert_eq!(out, want.iter().copied().collect::<Vec<_>>());

    let st = unsafe { un_model_neuron_activations(m, tokens.as_ptr(), 10, 1, out.as_mut_ptr(), 5) };
    assert_eq!(st, UnStatus::BufferSize);
    let st = unsafe { un_model_neuron_activations(m, tokens.as_ptr(), 10, 7, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, UnStatus::InvalidArgument);
    let bad = [99u32];
    let st = unsafe { un_model_neuron_activations(m, bad.as_ptr(), 1, 0, out.as_mut_ptr(), 24) };
    assert_eq!(st, UnStatus::OutOfBounds);
    unsafe { un_model_free(m) };
}

#[test]
fn corr_accumulator_round_trip() {
    let a: Vec<f32> = (0..60).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
    let b: Vec<f32> = (0..40).map(|i| ((i * 13) % 7) as f32 * 0.5).collect();
    let mask: Vec<u8> = (0..20).map(|i| u8::from(i % 5 != 0)).collect();
    let (mut x, mut y) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(un_corr_new(3, 2, &mut x), UnStatus::Ok);
        assert_eq!(un_corr_new(3, 2, &mut y), UnStatus::Ok);
        assert_eq!(un_corr_update(x, a.as_ptr(), b.as_ptr(), 10, mask.as_ptr()), UnStatus::Ok);
        assert_eq!(un_corr_update(y, a[30..].as_ptr(), b[20..].as_ptr(), 10, mask[10..].as_ptr()), UnStatus::Ok);
        assert_eq!(un_corr_merge(x, y), UnStatus::Ok);
        assert_eq!(un_corr_merge(x, x), UnStatus::InvalidArgument);
    }
    let mut count = 0;
    assert_eq!(unsafe { un_corr_count(x, &mut count) }, UnStatus::Ok);
    assert_eq!(count, 16);
    let mut got = vec![0f64; 6];
    assert_eq!(unsafe { un_corr_finalize(x, got.as_mut_ptr(), 6) }, UnStatus::Ok);

    let av = ndarray::ArrayView2::from_shape((20, 3), &a[..]).unwrap();
    let bv = ndarray::ArrayView2::from_shape((20, 2), &b[..]).unwrap();
    let keep: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
    let mut st = CorrState::new(3, 2);
    st.update(av, bv, Some(&keep)).unwrap();
    let want = st.finalize().unwrap();
    for (g, w) in got.iter().zip(want.iter()) {
        assert!((g - w).abs() < 1e-12);
    }
    let (mut n_a, mut n_b) = (0, 0);
    assert_eq!(unsafe { un_corr_dims(x, &mut n_a, &mut n_b) }, UnStatus::Ok);
    assert_eq!((n_a, n_b), (3, 2));
    unsafe {
        un_corr_free(x);
        un_corr_free(y);
    }
}

#[test]
fn correlate_duplicate_models_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth::config(2, 2, 16, 8, 24, 32);
    synth::random_model(&cfg, 9).save(dir.path().join("m")).unwrap();
    write_token_stream(&synth::random_tokens(20, 32, 24, 32, Some(0), 1), dir.path().join("t.bin")).unwrap();
    std::fs::write(dir.path().join("x.json"), r#"{"bos": [0]}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { un_model_load(cstr(&dir.path().join("m")).as_ptr(), &mut m) }, UnStatus::Ok);
    let (mut c, mut r) = (ptr::null_mut(), ptr::null_mut());
    let t = cstr(&dir.path().join("t.bin"));
    let x = cstr(&dir.path().join("x.json"));
    assert_eq!(unsafe { un_correlate(m, m, t.as_ptr(), x.as_ptr(), 3, &mut c, &mut r) }, UnStatus::Ok);
    let mut count = 0;
    unsafe { un_corr_count(c, &mut count) };
    assert_eq!(count, 20 * 31);
    let (mut corr, mut base) = (vec![0f64; 256], vec![0f64; 256]);
    unsafe {
        assert_eq!(un_corr_finalize(c, corr.as_mut_ptr(), 256), UnStatus::Ok);
        assert_eq!(un_corr_finalize(r, base.as_mut_ptr(), 256), UnStatus::Ok);
    }
    let (mut excess, mut argmax) = (vec![0f64; 16], vec![0i64; 16]);
    let st = unsafe {
        un_excess_correlation(corr.as_ptr(), base.as_ptr(), 16, 16, 16, excess.as_mut_ptr(), argmax.as_mut_ptr(), 16)
    };
    assert_eq!(st, UnStatus::Ok);
    for (i, &j) in argmax.iter().enumerate() {
        assert_eq!(j, i as i64);
        assert!((corr[i * 16 + i] - 1.0).abs() < 1e-6);
    }
    unsafe {
        un_corr_free(c);
        un_corr_free(r);
        un_model_free(m);
    }
}

#[test]
fn statistics_entry_points() {
    let xs = [0.0, 0.0, 0.0, 4.0];
    let mut m = UnMoments::default();
    assert_eq!(unsafe { un_moments(xs.as_ptr(), 4, &mut m) }, UnStatus::Ok);
    assert_eq!(m.count, 4);
    assert_eq!(m.mean, 1.0);
    assert_eq!(m.variance, 3.0);
    assert_eq!(m.sparsity, 0.25);
    // Scaled Bernoulli(1/4): kurtosis (1 - 3pq) / pq.
    assert!((m.kurtosis - (1.0 - 3.0 * 0.1875) / 0.1875).abs() < 1e-12);
    assert_eq!(unsafe { un_moments(xs.as_ptr(), 3, &mut m) }, UnStatus::Numeric);

    let acts = [1.0, 1.0, 5.0, 5.0, 1.0];
    let labels = [0u8, 0, 1, 1, 0];
    let mut score = 0.0;
    assert_eq!(unsafe { un_reduction_in_variance(acts.as_ptr(), labels.as_ptr(), ptr::null(), 5, &mut score) }, UnStatus::Ok);
    assert_eq!(score, 1.0);
    let mask = [1u8, 1, 0, 0, 1];
    assert_eq!(unsafe { un_reduction_in_variance(acts.as_ptr(), labels.as_ptr(), mask.as_ptr(), 5, &mut score) }, UnStatus::Ok);
    assert!(score.is_nan());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/universal_neurons.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct UnModel UnModel;", "typedef struct UnCorr UnCorr;", "UN_STATUS_OK = 0"] {
        assert!(header.contains(ty), "{ty}");
    }
}

/// Compiles and runs a small C program against the static library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libuniversal_neurons_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "universal_neurons.h"
int main(void) {
    double xs[5] = {1, 2, 3, 4, 10};
    UnMoments m;
    if (un_moments(xs, 5, &m) != UN_STATUS_OK) return 1;
    if (un_moments(NULL, 5, &m) != UN_STATUS_NULL_POINTER) return 2;
    if (strlen(un_last_error()) == 0) return 3;
    UnCorr *c = NULL;
    if (un_corr_new(1, 1, &c) != UN_STATUS_OK) return 4;
    float a[3] = {1, 2, 3}, b[3] = {2, 4, 7};
    if (un_corr_update(c, a, b, 3, NULL) != UN_STATUS_OK) return 5;
    double r;
    if (un_corr_finalize(c, &r, 1) != UN_STATUS_OK) return 6;
    un_corr_free(c);
    printf("%.6f %.6f %s\n", m.mean, r, un_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("4.000000 0.993399"), "{text}");
}
