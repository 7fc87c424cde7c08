//! C ABI over the `flst` simulator.
//!
//! Every fallible function returns a [`FlstStatus`]; on failure the message is
//! available from [`flst_last_error`] until the next call on the same thread.
//! Handles are opaque and must be released with their matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use flst::agents::entropy_penalty;
use flst::curriculum::{fit_ranking, Metric, RankingModel};
use flst::datasets::Dataset;
use flst::nn::{checkpoint, Activation, Matrix, Mlp};
use flst::runner::{run_experiment, ExperimentConfig, RunSummary};
use flst::FlstError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlstStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Numeric = 3,
    Io = 4,
    Shape = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlstActivation {
    Relu = 0,
    Tanh = 1,
    Softmax = 2,
    Linear = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlstMetric {
    Mahalanobis = 0,
    Cosine = 1,
}

/// Opaque dense network.
pub struct FlstMlp(Mlp);

/// Opaque fitted difficulty ranking.
pub struct FlstRanking(RankingModel);

/// Opaque experiment summary.
pub struct FlstRunSummary(RunSummary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &FlstError) -> FlstStatus {
    match err {
        FlstError::Config(_) | FlstError::Validation(_) => FlstStatus::Config,
        FlstError::Numeric(_) | FlstError::Estimation(_) => FlstStatus::Numeric,
        FlstError::Io { .. } | FlstError::Decode { .. } | FlstError::Parse { .. } => FlstStatus::Io,
        FlstError::Shape(_) => FlstStatus::Shape,
    }
}

enum Failure {
    Null(&'static str),
    Lib(FlstError),
}

impl From<FlstError> for Failure {
    fn from(e: FlstError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FlstStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlstStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed for `{name}`"));
            FlstStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FlstStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| FlstError::Config(format!("`{name}` is not valid UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    out.write(value);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn flst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a seeded network. `activations` has `layer_count - 1` entries.
///
/// # Safety
/// `sizes` must point to `layer_count` values and `activations` to `layer_count - 1`.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_new(
    sizes: *const usize,
    activations: *const FlstActivation,
    layer_count: usize,
    seed: u64,
    out: *mut *mut FlstMlp,
) -> FlstStatus {
    guard(|| {
        let sizes = slice(sizes, layer_count, "sizes")?;
        let acts = slice(activations, layer_count.saturating_sub(1), "activations")?;
        let acts: Vec<Activation> = acts
            .iter()
            .map(|a| match a {
                FlstActivation::Relu => Activation::Relu,
                FlstActivation::Tanh => Activation::Tanh,
                FlstActivation::Softmax => Activation::Softmax,
                FlstActivation::Linear => Activation::Linear,
            })
            .collect();
        let net = Mlp::new(sizes, &acts, seed)?;
        write_out(out, Box::into_raw(Box::new(FlstMlp(net))), "out")
    })
}

/// Input width of the network.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_input_dim(net: *const FlstMlp) -> usize {
    net.as_ref().map_or(0, |n| n.0.layer_sizes()[0])
}

/// Output width of the network.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_output_dim(net: *const FlstMlp) -> usize {
    net.as_ref().map_or(0, |n| *n.0.layer_sizes().last().unwrap())
}

/// Runs a row-major batch of `rows` inputs through the network into `output`
/// (`rows * output_dim` values).
///
/// # Safety
/// Buffers must hold the stated number of `f64` values.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_forward(
    net: *const FlstMlp,
    input: *const f64,
    rows: usize,
    output: *mut f64,
) -> FlstStatus {
    guard(|| {
        let net = &non_null(net, "net")?.0;
        let d = net.layer_sizes()[0];
        let x = Matrix::from_vec(rows, d, slice(input, rows * d, "input")?.to_vec())?;
        let y = net.predict(&x)?;
        let ys = y.as_slice();
        if !ys.is_empty() && output.is_null() {
            return Err(Failure::Null("output"));
        }
        ptr::copy_nonoverlapping(ys.as_ptr(), output, ys.len());
        Ok(())
    })
}

/// Writes the network to a checkpoint file.
///
/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_save(net: *const FlstMlp, path: *const c_char) -> FlstStatus {
    guard(|| {
        let net = &non_null(net, "net")?.0;
        checkpoint::save(path_arg(path, "path")?, net, &[])?;
        Ok(())
    })
}

/// Reads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_load(path: *const c_char, out: *mut *mut FlstMlp) -> FlstStatus {
    guard(|| {
        let ck = checkpoint::load(path_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(FlstMlp(ck.net))), "out")
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn flst_mlp_free(net: *mut FlstMlp) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Fits a difficulty ranking on `rows` row-major feature vectors of width `cols`.
///
/// # Safety
/// `features` must hold `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn flst_ranking_fit(
    features: *const f64,
    rows: usize,
    cols: usize,
    metric: FlstMetric,
    out: *mut *mut FlstRanking,
) -> FlstStatus {
    guard(|| {
        let x = Matrix::from_vec(rows, cols, slice(features, rows * cols, "features")?.to_vec())?;
        let data = Dataset::new(x, vec![0; rows], (0..rows as u64).collect(), 1)?;
        let metric = match metric {
            FlstMetric::Mahalanobis => Metric::Mahalanobis,
            FlstMetric::Cosine => Metric::Cosine,
        };
        let model = fit_ranking(&data, metric)?;
        write_out(out, Box::into_raw(Box::new(FlstRanking(model))), "out")
    })
}

/// Difficulty score of one feature vector of length `len`.
///
/// # Safety
/// `x` must hold `len` values and `score` be writable.
#[no_mangle]
pub unsafe extern "C" fn flst_ranking_score(
    model: *const FlstRanking,
    x: *const f64,
    len: usize,
    score: *mut f64,
) -> FlstStatus {
    guard(|| {
        let model = &non_null(model, "model")?.0;
        let s = model.score(slice(x, len, "x")?)?;
        write_out(score, s, "score")
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn flst_ranking_free(model: *mut FlstRanking) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Inverse-entropy penalty `1 / (H(p) + epsilon)` of a probability vector.
///
/// # Safety
/// `p` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn flst_entropy_penalty(p: *const f64, len: usize, epsilon: f64, out: *mut f64) -> FlstStatus {
    guard(|| write_out(out, entropy_penalty(slice(p, len, "p")?, epsilon), "out"))
}

/// Parses and validates a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flst_validate_config(path: *const c_char) -> FlstStatus {
    guard(|| {
        ExperimentConfig::from_path(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Runs the experiment in `config_path`, writing outputs to `out_dir`.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn flst_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut FlstRunSummary,
) -> FlstStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::from_path(path_arg(config_path, "config_path")?)?;
        cfg.run_record = None;
        let summary = run_experiment(&cfg, path_arg(out_dir, "out_dir")?)?;
        write_out(out, Box::into_raw(Box::new(FlstRunSummary(summary))), "out")
    })
}

/// Final test accuracy, or NaN when unavailable.
///
/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn flst_summary_final_accuracy(s: *const FlstRunSummary) -> f64 {
    s.as_ref().and_then(|s| s.0.final_test_accuracy).unwrap_or(f64::NAN)
}

/// Mean scheduler entropy over the final window, or NaN for a null handle.
///
/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn flst_summary_mean_entropy(s: *const FlstRunSummary) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.0.mean_scheduler_entropy)
}

/// Number of nodes covered by the selection frequencies.
///
/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn flst_summary_node_count(s: *const FlstRunSummary) -> usize {
    s.as_ref().map_or(0, |s| s.0.selection_frequencies.len())
}

/// Copies up to `len` selection frequencies into `out`; returns how many were written.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn flst_summary_selection_frequencies(s: *const FlstRunSummary, out: *mut f64, len: usize) -> usize {
    let Some(s) = s.as_ref() else { return 0 };
    if out.is_null() {
        return 0;
    }
    let f = &s.0.selection_frequencies;
    let n = f.len().min(len);
    ptr::copy_nonoverlapping(f.as_ptr(), out, n);
    n
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn flst_summary_free(s: *mut FlstRunSummary) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
