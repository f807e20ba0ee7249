//! C ABI over the sched-perf model.
//!
//! Handles are opaque pointers created by `sp_*_load` / `sp_dataset_generate`
//! and released with the matching `sp_*_free`. Every fallible call returns an
//! [`SpStatus`]; on failure [`sp_last_error`] describes the cause. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sched_perf::checkpoint::Checkpoint;
use sched_perf::dataset::{generate_dataset, read_dataset, Dataset, DatasetConfig};
use sched_perf::Error;

/// Result codes of the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Incompatible = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A loaded checkpoint.
pub struct SpModel {
    checkpoint: Checkpoint,
}

/// A dataset held in memory.
pub struct SpDataset {
    dataset: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("no interior nul"));
}

fn status_of(error: &Error) -> SpStatus {
    match error {
        Error::Io { .. } => SpStatus::Io,
        Error::Format { .. } => SpStatus::Format,
        Error::Incompatible { .. } => SpStatus::Incompatible,
        Error::Internal(_) => SpStatus::Internal,
        _ => SpStatus::InvalidArgument,
    }
}

fn guard(body: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SpStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Internal
        }
    }
}

fn lift<T>(r: sched_perf::Result<T>) -> Result<T, (SpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, (SpStatus, String)> {
    if path.is_null() {
        return Err((SpStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| (SpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

fn null(what: &str) -> (SpStatus, String) {
    (SpStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_model_load(path: *const c_char, out: *mut *mut SpModel) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let checkpoint = lift(Checkpoint::load(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(SpModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`sp_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_model_free(model: *mut SpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reads a dataset or single-record file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_load(path: *const c_char, out: *mut *mut SpDataset) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dataset = lift(read_dataset(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(SpDataset { dataset }));
        Ok(())
    })
}

/// Generates a synthetic dataset with default settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_generate(
    pipelines: u32,
    schedules_per_pipeline: u32,
    seed: u64,
    out: *mut *mut SpDataset,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = DatasetConfig {
            num_pipelines: pipelines as usize,
            schedules_per_pipeline: schedules_per_pipeline as usize,
            seed,
            ..DatasetConfig::default()
        };
        let dataset = lift(generate_dataset(&config))?;
        *out = Box::into_raw(Box::new(SpDataset { dataset }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_free(dataset: *mut SpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of records; 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_len(dataset: *const SpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.samples.len())
}

/// Mean measured run time (ms) of record `index`.
///
/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_mean_runtime(dataset: *const SpDataset, index: usize, out: *mut f64) -> SpStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = d
            .dataset
            .samples
            .get(index)
            .ok_or_else(|| (SpStatus::InvalidArgument, format!("index {index} out of range")))?;
        *out = s.mean_runtime();
        Ok(())
    })
}

/// Predicts every record of `dataset` into `out[0..len)`, where `len` must
/// be at least `sp_dataset_len(dataset)`.
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_model_predict(
    model: *const SpModel,
    dataset: *const SpDataset,
    out: *mut f64,
    len: usize,
) -> SpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = d.dataset.samples.len();
        if len < n {
            return Err((SpStatus::BufferTooSmall, format!("buffer holds {len}, need {n}")));
        }
        let samples: Vec<_> = d.dataset.samples.iter().collect();
        let predictions = lift(m.checkpoint.predict(&samples))?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&predictions);
        Ok(())
    })
}
