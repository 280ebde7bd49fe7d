//! C ABI over `dhgnn-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`DhgnnStatus`]; on failure a description is available from
//! [`dhgnn_last_error`] on the same thread until the next failing call.
//! Strings returned through out-parameters are freed with [`dhgnn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dhgnn_core::checkpoint::Checkpoint;
use dhgnn_core::graph::{edge_homophily, io, LabeledDataset, MaskKind};
use dhgnn_core::model::GraphOps;
use dhgnn_core::train::{
    evaluate_accuracy, make_node_splits, model_gradcheck, rng_for, train_node_split, GradcheckOptions, Network,
    TrainConfig, NODE_SPLIT_RATIOS,
};
use dhgnn_core::{DirectedGraph, Error, Matrix};

/// Result of every fallible call. The nonzero values below 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhgnnStatus {
    Ok = 0,
    /// A verification (gradient check) did not pass.
    Verification = 1,
    /// Malformed data, configuration, dimensions, or checkpoint.
    Input = 2,
    /// A loss or gradient became non-finite.
    Numerical = 3,
    /// Null pointer, invalid UTF-8, or out-of-range enum value.
    InvalidArgument = 4,
    /// The library panicked; the handle arguments should be considered unusable.
    Panic = 5,
}

/// Node mask selector for [`dhgnn_model_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhgnnMask {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// A labelled directed graph with node features and optional splits.
pub struct DhgnnDataset {
    inner: LabeledDataset,
}

/// A trained network and the graph orientation it was trained on.
pub struct DhgnnModel {
    net: Network,
    symmetrize: bool,
}

enum Failure {
    Core(Error),
    Argument(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> DhgnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DhgnnStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            match e.exit_code() {
                1 => DhgnnStatus::Verification,
                3 => DhgnnStatus::Numerical,
                _ => DhgnnStatus::Input,
            }
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(msg);
            DhgnnStatus::InvalidArgument
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DhgnnStatus::Panic
        }
    }
}

fn arg_err<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Argument(msg.into()))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| arg_err(format!("{name} is null")), Ok)
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| arg_err(format!("{name} is null")), Ok)
}

unsafe fn string_arg(p: *const c_char, name: &str) -> Result<String, Failure> {
    if p.is_null() {
        return arg_err(format!("{name} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => arg_err(format!("{name} is not valid UTF-8")),
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return arg_err(format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dhgnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or null if none has failed.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dhgnn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory (`edges.tsv`, `features.tsv`, `labels.tsv`, optional `splits.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_load(path: *const c_char, out: *mut *mut DhgnnDataset) -> DhgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let dir = PathBuf::from(string_arg(path, "path")?);
        let inner = io::load_dataset(dir)?;
        *out = Box::into_raw(Box::new(DhgnnDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from arrays: `features` is row-major `num_nodes x num_features`,
/// `labels` has `num_nodes` entries, and edge `i` runs from `src[i]` to `dst[i]`.
/// The dataset starts without splits.
///
/// # Safety
/// Each array must hold the stated number of elements; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_from_arrays(
    num_nodes: usize,
    num_features: usize,
    features: *const f64,
    labels: *const usize,
    src: *const usize,
    dst: *const usize,
    num_edges: usize,
    out: *mut *mut DhgnnDataset,
) -> DhgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let Some(len) = num_nodes.checked_mul(num_features) else {
            return arg_err("num_nodes * num_features overflows");
        };
        let features = slice_arg(features, len, "features")?;
        let labels = slice_arg(labels, num_nodes, "labels")?;
        let src = slice_arg(src, num_edges, "src")?;
        let dst = slice_arg(dst, num_edges, "dst")?;
        let edges: Vec<(usize, usize)> = src.iter().copied().zip(dst.iter().copied()).collect();
        let graph = DirectedGraph::new(num_nodes, &edges)?;
        let x = Matrix::from_vec(num_nodes, num_features, features.to_vec());
        let inner = LabeledDataset::new(graph, x, labels.to_vec(), Vec::new())?;
        *out = Box::into_raw(Box::new(DhgnnDataset { inner }));
        Ok(())
    })
}

/// Replaces the dataset's splits with `count` stratified 48/32/20 splits drawn from `seed`.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_generate_splits(ds: *mut DhgnnDataset, count: usize, seed: u64) -> DhgnnStatus {
    guard(|| {
        let ds = out_ptr(ds, "ds")?;
        let mut rng = rng_for(seed, u64::MAX);
        ds.inner.splits = make_node_splits(&ds.inner.labels, count, NODE_SPLIT_RATIOS, &mut rng)?.splits;
        Ok(())
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_free(ds: *mut DhgnnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_num_nodes(ds: *const DhgnnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_nodes())
}

/// Distinct edge count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_num_edges(ds: *const DhgnnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.graph.num_edges())
}

/// Split count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_dataset_num_splits(ds: *const DhgnnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.splits.len())
}

/// Fraction of edges joining same-label nodes; NaN when the graph has no edges.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_edge_homophily(ds: *const DhgnnDataset, out: *mut f64) -> DhgnnStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let out = out_ptr(out, "out")?;
        *out = edge_homophily(&ds.inner.graph, &ds.inner.labels).unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Full diagnostics report (hop curves, edge homophily, class matrices) as JSON.
///
/// # Safety
/// `ds` must be a live dataset handle; `out_json` must be valid for writes.
/// The string is freed with [`dhgnn_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dhgnn_analyze_json(
    ds: *const DhgnnDataset,
    max_hops: usize,
    out_json: *mut *mut c_char,
) -> DhgnnStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let out = out_ptr(out_json, "out_json")?;
        *out = ptr::null_mut();
        let report = dhgnn_core::cli::analysis_report(&ds.inner, max_hops)?;
        *out = into_c_string(report.to_string());
        Ok(())
    })
}

/// Trains node classification on one split with a JSON configuration.
///
/// On success `*out_model` receives the best-validation network and, if
/// non-null, `*out_test_acc` its test accuracy.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` a NUL-terminated string,
/// `out_model` valid for writes, and `out_test_acc` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_train_split(
    ds: *const DhgnnDataset,
    config_json: *const c_char,
    split: usize,
    out_model: *mut *mut DhgnnModel,
    out_test_acc: *mut f64,
) -> DhgnnStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let out = out_ptr(out_model, "out_model")?;
        *out = ptr::null_mut();
        let cfg = TrainConfig::from_json(&string_arg(config_json, "config_json")?)?;
        let (net, outcome) = train_node_split(&ds.inner, split, &cfg)?;
        if let Some(acc) = out_test_acc.as_mut() {
            *acc = outcome.test_acc;
        }
        *out = Box::into_raw(Box::new(DhgnnModel {
            net,
            symmetrize: cfg.symmetrize,
        }));
        Ok(())
    })
}

/// Accuracy of `model` on one mask (a [`DhgnnMask`] value) of split `split`.
///
/// # Safety
/// `model` and `ds` must be live handles; `out_acc` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_model_evaluate(
    model: *const DhgnnModel,
    ds: *const DhgnnDataset,
    split: usize,
    mask: u32,
    out_acc: *mut f64,
) -> DhgnnStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let ds = borrow(ds, "ds")?;
        let out = out_ptr(out_acc, "out_acc")?;
        let kind = match mask {
            0 => MaskKind::Train,
            1 => MaskKind::Val,
            2 => MaskKind::Test,
            other => return arg_err(format!("mask must be 0, 1 or 2, got {other}")),
        };
        let Some(s) = ds.inner.splits.get(split) else {
            return Err(Error::Config(format!("dataset has no split {split}")).into());
        };
        let graph = if model.symmetrize { ds.inner.graph.symmetrize() } else { ds.inner.graph.clone() };
        *out = evaluate_accuracy(&model.net, &GraphOps::new(&graph), &ds.inner, s, kind)?;
        Ok(())
    })
}

/// Writes a checkpoint readable by the `dhgnn` CLI.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_model_save(model: *const DhgnnModel, path: *const c_char) -> DhgnnStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let path = PathBuf::from(string_arg(path, "path")?);
        Checkpoint::from_trained(&model.net, model.symmetrize).save(&path)?;
        Ok(())
    })
}

/// Reads a checkpoint written by [`dhgnn_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_model_load(path: *const c_char, out: *mut *mut DhgnnModel) -> DhgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ck = Checkpoint::load(&PathBuf::from(string_arg(path, "path")?))?;
        let net = ck.to_network()?;
        *out = Box::into_raw(Box::new(DhgnnModel {
            net,
            symmetrize: ck.symmetrized(),
        }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_model_free(model: *mut DhgnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Finite-difference check of every parameter gradient on a random `size`-node instance.
///
/// Returns `Ok` when all entries are within `tol` and the stop-gradient checks hold,
/// `Verification` otherwise. `out_max_error`, if non-null, receives the worst relative error.
///
/// # Safety
/// `out_max_error` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dhgnn_gradcheck(size: usize, tol: f64, seed: u64, out_max_error: *mut f64) -> DhgnnStatus {
    guard(|| {
        if size < 2 || tol.is_nan() || tol <= 0.0 {
            return arg_err("size must be at least 2 and tol positive");
        }
        let report = model_gradcheck(&GradcheckOptions {
            size,
            tol,
            seed,
            ..GradcheckOptions::default()
        })?;
        if let Some(e) = out_max_error.as_mut() {
            *e = report.max_error;
        }
        if report.passed {
            Ok(())
        } else {
            Err(Error::Verification(format!(
                "max relative error {:.3e} at {}[{}]",
                report.max_error, report.worst_param, report.worst_index
            ))
            .into())
        }
    })
}
