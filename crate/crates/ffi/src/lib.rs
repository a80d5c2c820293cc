//! C ABI over the `universal-neurons` toolkit.
//!
//! Conventions:
//!
//! * Every function returns a [`UnStatus`]; `UN_STATUS_OK` is zero. On any
//!   other value a message is stored per thread and [`un_last_error`] returns it.
//! * Handles ([`UnModel`], [`UnCorr`]) are opaque. Whatever a `*_load` or
//!   `*_new` call hands out must be released with the matching `*_free`.
//! * Array results are written into caller-owned buffers. The caller passes
//!   the buffer length in elements and gets `UN_STATUS_BUFFER_SIZE` when it
//!   does not match the required size exactly.
//! * Matrices are row-major.
//! * Panics never cross the boundary; they surface as `UN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::ArrayView2;
use universal_neurons::corr::{
    correlate_models, summarize_matrices, CorrState, CorrelateOptions, RotationBaseline,
};
use universal_neurons::model::{preprocess, ModelWeights, NeuronSide};
use universal_neurons::stats::MomentState;
use universal_neurons::taxonomy::reduction_in_variance;
use universal_neurons::tensor_io::{read_token_stream, ExclusionConfig};
use universal_neurons::Error;

/// Result code of every `un_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    OutOfBounds = 6,
    Numeric = 7,
    BufferSize = 8,
    Panic = 9,
}

/// Which side of the MLP nonlinearity to read.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnSide {
    Pre = 0,
    Post = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnModelDims {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub d_vocab: usize,
    pub n_ctx: usize,
}

/// Summary moments of one sample. Kurtosis is non-excess (3 for a Gaussian).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnMoments {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub skew: f64,
    pub kurtosis: f64,
    pub sparsity: f64,
}

/// A loaded, preprocessed model.
pub struct UnModel {
    weights: ModelWeights,
}

/// A streaming Pearson accumulator.
pub struct UnCorr {
    state: CorrState,
}

struct Failure {
    status: UnStatus,
    message: String,
}

impl Failure {
    fn new(status: UnStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::File { .. } => UnStatus::Io,
            Error::Format { .. } | Error::UnsupportedDtype(_) | Error::Json(_) | Error::Csv(_) => UnStatus::Format,
            Error::Shape(_) => UnStatus::Shape,
            Error::TokenOutOfRange { .. } | Error::OutOfBounds(_) => UnStatus::OutOfBounds,
            Error::Invalid(_) => UnStatus::InvalidArgument,
            Error::Numeric(_) => UnStatus::Numeric,
        };
        Failure::new(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> UnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UnStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            set_last_error(&format!("internal panic: {msg}"));
            UnStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(UnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(UnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(UnStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, want: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len != want {
        return Err(Failure::new(
            UnStatus::BufferSize,
            format!("{what} holds {len} elements, {want} required"),
        ));
    }
    if want == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::new(UnStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(UnStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(UnStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn mask_of(m: &[u8]) -> Vec<bool> {
    m.iter().map(|&x| x != 0).collect()
}

fn view<'a>(data: &'a [f32], rows: usize, cols: usize) -> Result<ArrayView2<'a, f32>, Failure> {
    ArrayView2::from_shape((rows, cols), data).map_err(|e| Failure::new(UnStatus::Shape, e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn un_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread; empty when none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn un_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model directory and preprocesses it (layer-norm folding and
/// centering). On success `*out` owns a new handle.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn un_model_load(dir: *const c_char, out: *mut *mut UnModel) -> UnStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let dir = path(dir, "dir")?;
        let weights = preprocess(&ModelWeights::load(dir)?)?;
        *out = Box::into_raw(Box::new(UnModel { weights }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`un_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn un_model_free(model: *mut UnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_model_dims(model: *const UnModel, out: *mut UnModelDims) -> UnStatus {
    guard(|| {
        let c = &get(model, "model")?.weights.config;
        *get_mut(out, "out")? = UnModelDims {
            n_layer: c.n_layer,
            n_head: c.n_head,
            d_model: c.d_model,
            d_mlp: c.d_mlp,
            d_vocab: c.d_vocab,
            n_ctx: c.n_ctx,
        };
        Ok(())
    })
}

/// Runs one context window and writes every neuron's value into `out`,
/// `n_tokens × (n_layer · d_mlp)` row-major, layer-major columns.
/// `side` is a [`UnSide`] value.
///
/// # Safety
/// `tokens` must hold `n_tokens` ids and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn un_model_neuron_activations(
    model: *const UnModel,
    tokens: *const u32,
    n_tokens: usize,
    side: i32,
    out: *mut f32,
    out_len: usize,
) -> UnStatus {
    guard(|| {
        let w = &get(model, "model")?.weights;
        let side = match side {
            0 => NeuronSide::Pre,
            1 => NeuronSide::Post,
            s => return Err(Failure::new(UnStatus::InvalidArgument, format!("side {s} is neither pre nor post"))),
        };
        let tokens = slice(tokens, n_tokens, "tokens")?;
        let dst = slice_mut(out, out_len, n_tokens * w.config.n_neurons(), "out")?;
        let acts = w.neuron_activations(tokens, side, &[])?;
        dst.iter_mut().zip(acts.iter()).for_each(|(d, &a)| *d = a);
        Ok(())
    })
}

/// Creates an empty accumulator for `n_a × n_b` correlations.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn un_corr_new(n_a: usize, n_b: usize, out: *mut *mut UnCorr) -> UnStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = std::ptr::null_mut();
        if n_a == 0 || n_b == 0 {
            return Err(Failure::new(UnStatus::InvalidArgument, "dimensions must be positive"));
        }
        *out = Box::into_raw(Box::new(UnCorr {
            state: CorrState::new(n_a, n_b),
        }));
        Ok(())
    })
}

/// Releases an accumulator. Null is ignored.
///
/// # Safety
/// `corr` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn un_corr_free(corr: *mut UnCorr) {
    if !corr.is_null() {
        drop(Box::from_raw(corr));
    }
}

/// Adds `n_rows` aligned samples: `a` is `n_rows × n_a`, `b` is
/// `n_rows × n_b`. Rows whose `mask` byte is zero are skipped; a null mask
/// keeps every row.
///
/// # Safety
/// Buffers must hold the sizes above.
#[no_mangle]
pub unsafe extern "C" fn un_corr_update(
    corr: *mut UnCorr,
    a: *const f32,
    b: *const f32,
    n_rows: usize,
    mask: *const u8,
) -> UnStatus {
    guard(|| {
        let st = &mut get_mut(corr, "corr")?.state;
        let (n_a, n_b) = st.dims();
        let a = view(slice(a, n_rows * n_a, "a")?, n_rows, n_a)?;
        let b = view(slice(b, n_rows * n_b, "b")?, n_rows, n_b)?;
        let mask = if mask.is_null() {
            None
        } else {
            Some(mask_of(slice(mask, n_rows, "mask")?))
        };
        st.update(a, b, mask.as_deref())?;
        Ok(())
    })
}

/// Folds `src` into `dst`; `src` is left unchanged.
///
/// # Safety
/// Both handles must be valid and distinct.
#[no_mangle]
pub unsafe extern "C" fn un_corr_merge(dst: *mut UnCorr, src: *const UnCorr) -> UnStatus {
    guard(|| {
        if std::ptr::eq(dst, src) {
            return Err(Failure::new(UnStatus::InvalidArgument, "cannot merge an accumulator into itself"));
        }
        let src = &get(src, "src")?.state;
        get_mut(dst, "dst")?.state.merge(src)?;
        Ok(())
    })
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_corr_dims(corr: *const UnCorr, n_a: *mut usize, n_b: *mut usize) -> UnStatus {
    guard(|| {
        let (a, b) = get(corr, "corr")?.state.dims();
        *get_mut(n_a, "n_a")? = a;
        *get_mut(n_b, "n_b")? = b;
        Ok(())
    })
}

/// Number of samples accumulated so far.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_corr_count(corr: *const UnCorr, out: *mut u64) -> UnStatus {
    guard(|| {
        *get_mut(out, "out")? = get(corr, "corr")?.state.count();
        Ok(())
    })
}

/// Writes the `n_a × n_b` Pearson matrix. Pairs involving a constant
/// variable are NaN.
///
/// # Safety
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn un_corr_finalize(corr: *const UnCorr, out: *mut f64, out_len: usize) -> UnStatus {
    guard(|| {
        let st = &get(corr, "corr")?.state;
        let (n_a, n_b) = st.dims();
        let dst = slice_mut(out, out_len, n_a * n_b, "out")?;
        let m = st.finalize()?;
        dst.iter_mut().zip(m.iter()).for_each(|(d, &x)| *d = x);
        Ok(())
    })
}

/// Streams a token file through two models and returns the neuron
/// correlation accumulator and its rotated-basis baseline as new handles.
/// `exclusions` is an optional JSON exclusion config (null for none).
///
/// # Safety
/// Strings must be NUL-terminated; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_correlate(
    reference: *const UnModel,
    comparison: *const UnModel,
    tokens_path: *const c_char,
    exclusions_path: *const c_char,
    baseline_seed: u64,
    out_corr: *mut *mut UnCorr,
    out_baseline: *mut *mut UnCorr,
) -> UnStatus {
    guard(|| {
        let out_corr = get_mut(out_corr, "out_corr")?;
        let out_baseline = get_mut(out_baseline, "out_baseline")?;
        *out_corr = std::ptr::null_mut();
        *out_baseline = std::ptr::null_mut();
        let a = &get(reference, "reference")?.weights;
        let b = &get(comparison, "comparison")?.weights;
        let excl = if exclusions_path.is_null() {
            ExclusionConfig::default()
        } else {
            ExclusionConfig::load(path(exclusions_path, "exclusions_path")?)?
        };
        let set = excl.to_set();
        set.check_vocab(a.config.d_vocab)?;
        let toks = read_token_stream(path(tokens_path, "tokens_path")?, &set, Some(a.config.d_vocab))?;
        let rotation = RotationBaseline::gaussian(b.config.n_layer, b.config.d_mlp, baseline_seed);
        let run = correlate_models(a, b, &toks, &rotation, CorrelateOptions::default())?;
        *out_corr = Box::into_raw(Box::new(UnCorr { state: run.corr }));
        *out_baseline = Box::into_raw(Box::new(UnCorr { state: run.baseline }));
        Ok(())
    })
}

/// Per reference neuron: `max_j corr - max_k baseline` into `out_excess`
/// and the maximising comparison column into `out_argmax` (-1 when a row is
/// all NaN). `corr` is `n_ref × n_cmp`, `baseline` is `n_ref × n_rot`.
///
/// # Safety
/// Buffers must hold the sizes above; outputs hold `n_ref` entries.
#[no_mangle]
pub unsafe extern "C" fn un_excess_correlation(
    corr: *const f64,
    baseline: *const f64,
    n_ref: usize,
    n_cmp: usize,
    n_rot: usize,
    out_excess: *mut f64,
    out_argmax: *mut i64,
    out_len: usize,
) -> UnStatus {
    guard(|| {
        let c = ArrayView2::from_shape((n_ref, n_cmp), slice(corr, n_ref * n_cmp, "corr")?)
            .map_err(|e| Failure::new(UnStatus::Shape, e.to_string()))?;
        let r = ArrayView2::from_shape((n_ref, n_rot), slice(baseline, n_ref * n_rot, "baseline")?)
            .map_err(|e| Failure::new(UnStatus::Shape, e.to_string()))?;
        let excess = slice_mut(out_excess, out_len, n_ref, "out_excess")?;
        let argmax = slice_mut(out_argmax, out_len, n_ref, "out_argmax")?;
        let records = summarize_matrices(&[c], &[r], f64::INFINITY)?;
        for (i, rec) in records.iter().enumerate() {
            excess[i] = rec.excess;
            argmax[i] = rec.argmax[0].map_or(-1, |j| j as i64);
        }
        Ok(())
    })
}

/// Mean, variance, skew, non-excess kurtosis and the fraction of positive
/// values of `n` samples. Needs at least four samples.
///
/// # Safety
/// `xs` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_moments(xs: *const f64, n: usize, out: *mut UnMoments) -> UnStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        let m = MomentState::from_slice(slice(xs, n, "xs")?).finalize()?;
        *out = UnMoments {
            count: m.count,
            mean: m.mean,
            variance: m.variance,
            skew: m.skew,
            kurtosis: m.kurtosis,
            sparsity: m.sparsity,
        };
        Ok(())
    })
}

/// Share of the variance of `acts` explained by the binary `labels`.
/// Samples whose `mask` byte is zero are skipped; a null mask keeps all.
/// The score is NaN when the activation is constant.
///
/// # Safety
/// Buffers must hold `n` entries; `out_score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn un_reduction_in_variance(
    acts: *const f64,
    labels: *const u8,
    mask: *const u8,
    n: usize,
    out_score: *mut f64,
) -> UnStatus {
    guard(|| {
        let out = get_mut(out_score, "out_score")?;
        let acts = slice(acts, n, "acts")?;
        let labels = slice(labels, n, "labels")?;
        let mask = if mask.is_null() {
            None
        } else {
            Some(mask_of(slice(mask, n, "mask")?))
        };
        *out = reduction_in_variance(acts, labels, mask.as_deref())?.score;
        Ok(())
    })
}
