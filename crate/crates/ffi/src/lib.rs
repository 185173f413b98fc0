//! C bindings for autofield.
//!
//! Every function returns an [`AfStatus`]; results come back through out
//! pointers. On failure, [`af_last_error`] returns a message for the calling
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use autofield::checkpoint::{load_checkpoint, CheckpointMeta};
use autofield::controller::{select_top_k, Controller, ControllerSettings, TemperatureSchedule};
use autofield::data::{Batch, EncodedDataset, SplitTag};
use autofield::diff::AdamConfig;
use autofield::metrics::{auc, logloss, ScoredSet};
use autofield::model::RecModel;
use autofield::Error;

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Contract = 3,
    Format = 4,
    Io = 5,
    Parse = 6,
    Numeric = 7,
    InvalidUtf8 = 8,
    Panic = 9,
}

impl From<&Error> for AfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => AfStatus::Config,
            Error::Contract(_) => AfStatus::Contract,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => AfStatus::Format,
            Error::Io { .. } => AfStatus::Io,
            Error::Parse { .. } => AfStatus::Parse,
            Error::MetricUndefined(_) | Error::NonFinite { .. } => AfStatus::Numeric,
        }
    }
}

/// Encoded dataset loaded from an `.afds` file.
pub struct AfDataset {
    inner: EncodedDataset,
}

/// Trained model loaded from a checkpoint.
pub struct AfModel {
    inner: RecModel,
    meta: CheckpointMeta,
}

/// Field-selection controller.
pub struct AfController {
    inner: Controller,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: AfStatus, message: impl Into<String>) -> AfStatus {
    set_error(message.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), AfStatus>) -> AfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(AfStatus::Panic, "internal panic"),
    }
}

fn check<T>(r: autofield::Result<T>) -> Result<T, AfStatus> {
    r.map_err(|e| fail(AfStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), AfStatus> {
    if p.is_null() {
        Err(fail(AfStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, AfStatus> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(AfStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], AfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], AfStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), AfStatus> {
    non_null(p, what)?;
    *p = value;
    Ok(())
}

fn capacity(have: usize, need: usize, what: &str) -> Result<(), AfStatus> {
    if have < need {
        Err(fail(AfStatus::Contract, format!("{what} holds {have} values, {need} needed")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens an encoded dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_dataset_open(path: *const c_char, out: *mut *mut AfDataset) -> AfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path, "path")?;
        let inner = check(EncodedDataset::read(&path))?;
        *out = Box::into_raw(Box::new(AfDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`af_dataset_open`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_dataset_num_rows(ds: *const AfDataset, out: *mut usize) -> AfStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        write_out(out, (*ds).inner.num_rows(), "out")
    })
}

/// # Safety
/// `ds` must come from [`af_dataset_open`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_dataset_num_fields(ds: *const AfDataset, out: *mut usize) -> AfStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        write_out(out, (*ds).inner.num_fields(), "out")
    })
}

/// Copies row `row`'s field indices into `indices` (capacity `len`) and its
/// label into `label`.
///
/// # Safety
/// `ds` must come from [`af_dataset_open`]; `indices` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn af_dataset_row(
    ds: *const AfDataset,
    row: usize,
    indices: *mut u32,
    len: usize,
    label: *mut u8,
) -> AfStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        let ds = &(*ds).inner;
        if row >= ds.num_rows() {
            return Err(fail(AfStatus::Contract, format!("row {row} out of range ({} rows)", ds.num_rows())));
        }
        capacity(len, ds.num_fields(), "indices")?;
        slice_out(indices, len, "indices")?[..ds.num_fields()].copy_from_slice(ds.row(row));
        write_out(label, ds.label(row), "label")
    })
}

/// # Safety
/// `ds` must come from [`af_dataset_open`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn af_dataset_free(ds: *mut AfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_model_load(path: *const c_char, out: *mut *mut AfModel) -> AfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path, "path")?;
        let (inner, meta) = check(load_checkpoint(&path))?;
        *out = Box::into_raw(Box::new(AfModel { inner, meta }));
        Ok(())
    })
}

/// Number of fields an input row must carry (active or not).
///
/// # Safety
/// `model` must come from [`af_model_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_model_num_fields(model: *const AfModel, out: *mut usize) -> AfStatus {
    guard(|| {
        non_null(model, "model")?;
        write_out(out, (*model).inner.config.num_fields(), "out")
    })
}

/// Number of fields the model actually reads.
///
/// # Safety
/// `model` must come from [`af_model_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_model_num_active(model: *const AfModel, out: *mut usize) -> AfStatus {
    guard(|| {
        non_null(model, "model")?;
        write_out(out, (*model).inner.config.active.len(), "out")
    })
}

/// Active field ids, ascending, written to `fields` (capacity `len`).
///
/// # Safety
/// `model` must come from [`af_model_load`]; `fields` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn af_model_active_fields(model: *const AfModel, fields: *mut usize, len: usize) -> AfStatus {
    guard(|| {
        non_null(model, "model")?;
        let active = &(*model).inner.config.active;
        capacity(len, active.len(), "fields")?;
        slice_out(fields, len, "fields")?[..active.len()].copy_from_slice(active);
        Ok(())
    })
}

/// Seed stored in the checkpoint.
///
/// # Safety
/// `model` must come from [`af_model_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_model_seed(model: *const AfModel, out: *mut u64) -> AfStatus {
    guard(|| {
        non_null(model, "model")?;
        write_out(out, (*model).meta.seed, "out")
    })
}

/// Click probabilities for `rows` rows of `num_fields` indices each
/// (row-major) into `scores`.
///
/// # Safety
/// `indices` must hold `rows * num_fields` values and `scores` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn af_model_predict(
    model: *const AfModel,
    indices: *const u32,
    rows: usize,
    num_fields: usize,
    scores: *mut f64,
) -> AfStatus {
    guard(|| {
        non_null(model, "model")?;
        let model = &(*model).inner;
        if num_fields != model.config.num_fields() {
            return Err(fail(
                AfStatus::Contract,
                format!("rows carry {num_fields} fields, model expects {}", model.config.num_fields()),
            ));
        }
        let total =
            rows.checked_mul(num_fields).ok_or_else(|| fail(AfStatus::Contract, "rows * num_fields overflows"))?;
        let batch = Batch {
            tag: SplitTag::Test,
            num_fields,
            indices: slice_arg(indices, total, "indices")?.to_vec(),
            labels: vec![0.0; rows],
        };
        let p = check(model.predict(&batch))?;
        slice_out(scores, rows, "scores")?.copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`af_model_load`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn af_model_free(model: *mut AfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the ROC curve with ties counted as one half.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_auc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> AfStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        let set = check(ScoredSet::new(s, l))?;
        write_out(out, check(auc(&set))?, "out")
    })
}

/// Mean binary cross-entropy, probabilities clamped away from 0 and 1.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_logloss(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> AfStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        let set = check(ScoredSet::new(s, l))?;
        write_out(out, check(logloss(&set))?, "out")
    })
}

/// Default annealed temperature after `step` controller updates.
#[no_mangle]
pub extern "C" fn af_temperature(step: u64) -> f64 {
    TemperatureSchedule::default().at(step)
}

/// New controller over `num_fields` fields with α¹ = 0.5 everywhere.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_controller_new(num_fields: usize, out: *mut *mut AfController) -> AfStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = check(Controller::new(num_fields, ControllerSettings::default(), AdamConfig::default()))?;
        *out = Box::into_raw(Box::new(AfController { inner }));
        Ok(())
    })
}

/// Overwrites the logit pairs, laid out `[select_0, drop_0, select_1, ...]`.
///
/// # Safety
/// `logits` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn af_controller_set_logits(c: *mut AfController, logits: *const f64, len: usize) -> AfStatus {
    guard(|| {
        non_null(c, "controller")?;
        let c = &mut (*c).inner;
        let need = 2 * c.num_fields();
        if len != need {
            return Err(fail(AfStatus::Contract, format!("{len} logits given, {need} expected")));
        }
        let src = slice_arg(logits, len, "logits")?;
        if src.iter().any(|x| !x.is_finite()) {
            return Err(fail(AfStatus::Numeric, "logits must be finite"));
        }
        c.logits_mut().copy_from_slice(src);
        Ok(())
    })
}

/// α¹ per field into `alpha` (capacity `len`).
///
/// # Safety
/// `c` must come from [`af_controller_new`]; `alpha` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn af_controller_alpha(c: *const AfController, alpha: *mut f64, len: usize) -> AfStatus {
    guard(|| {
        non_null(c, "controller")?;
        let a = (*c).inner.alpha1();
        capacity(len, a.len(), "alpha")?;
        slice_out(alpha, len, "alpha")?[..a.len()].copy_from_slice(&a);
        Ok(())
    })
}

/// The `k` fields with the largest α¹, ascending, into `fields`.
///
/// # Safety
/// `c` must come from [`af_controller_new`]; `fields` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn af_controller_top_k(
    c: *const AfController,
    k: usize,
    fields: *mut usize,
    len: usize,
) -> AfStatus {
    guard(|| {
        non_null(c, "controller")?;
        let sel = check(select_top_k(&(*c).inner.alpha1(), k))?;
        capacity(len, sel.len(), "fields")?;
        slice_out(fields, len, "fields")?[..sel.len()].copy_from_slice(&sel);
        Ok(())
    })
}

/// # Safety
/// `c` must come from [`af_controller_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn af_controller_free(c: *mut AfController) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs search, retraining and evaluation, writing artifacts to `out_dir`.
/// `config_path` may be null for the defaults.
///
/// # Safety
/// Non-null arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn af_pipeline_run(config_path: *const c_char, out_dir: *const c_char) -> AfStatus {
    guard(|| {
        let out = path_arg(out_dir, "out_dir")?;
        let mut args = vec!["autofield".into(), "pipeline".into(), "--out".into(), out.into_os_string()];
        if !config_path.is_null() {
            args.push("--config".into());
            args.push(path_arg(config_path, "config_path")?.into_os_string());
        }
        check(autofield::cli::run_args(args))
    })
}
