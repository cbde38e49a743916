//! C ABI over the `fedcbdr` core.
//!
//! Every function returns an [`FcbdrStatus`]; on failure the message is kept
//! per thread and can be read with [`fcbdr_last_error`]. Handles are opaque
//! and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedcbdr::experiment::run_experiment;
use fedcbdr::gdr::{row_leverage, RankPolicy};
use fedcbdr::linalg::{singular_values, thin_svd, Matrix};
use fedcbdr::nn::{load_checkpoint, save_checkpoint, Model};
use fedcbdr::{Error, ExperimentConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcbdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDimension = 3,
    MissingFile = 4,
    Config = 5,
    Io = 6,
    /// Malformed checkpoint, IDX or metrics input.
    Format = 7,
    /// Numerical failure such as degenerate features.
    Numerical = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
    /// Caller buffer too small; the required size was written back.
    BufferTooSmall = 10,
}

/// Parsed experiment configuration.
pub struct FcbdrConfig(ExperimentConfig);

/// Trained or loaded model.
pub struct FcbdrModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FcbdrStatus {
    match e {
        Error::InvalidDimension(_) | Error::ShapeMismatch(_) => FcbdrStatus::InvalidDimension,
        Error::InvalidInput(_) | Error::InvalidArgument(_) => FcbdrStatus::InvalidArgument,
        Error::MissingFile(_) => FcbdrStatus::MissingFile,
        Error::Config { .. } => FcbdrStatus::Config,
        Error::Io(_) => FcbdrStatus::Io,
        Error::BadMagic { .. }
        | Error::CountMismatch { .. }
        | Error::Truncated(_)
        | Error::Checkpoint(_)
        | Error::Metrics { .. }
        | Error::Json(_) => FcbdrStatus::Format,
        _ => FcbdrStatus::Numerical,
    }
}

struct Fail(FcbdrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: FcbdrStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FcbdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FcbdrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            FcbdrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(FcbdrStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FcbdrStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(FcbdrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(FcbdrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(FcbdrStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(FcbdrStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix_arg(data: *const f64, rows: usize, cols: usize) -> Result<Matrix, Fail> {
    let len = rows.checked_mul(cols).ok_or_else(|| {
        Fail(
            FcbdrStatus::InvalidDimension,
            "rows * cols overflows".into(),
        )
    })?;
    let values = slice_arg(data, len, "data")?;
    Ok(Matrix::new(rows, cols, values.to_vec())?)
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fcbdr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parse and validate a JSON config.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_config_from_json(
    json: *const c_char,
    out: *mut *mut FcbdrConfig,
) -> FcbdrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(FcbdrConfig(cfg)));
        Ok(())
    })
}

/// Serialize a config back to JSON into `buf` (including the NUL). On
/// `BufferTooSmall`, `*needed` holds the required capacity.
///
/// # Safety
/// `config` must come from `fcbdr_config_from_json`; `buf` must hold `cap`
/// bytes; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_config_to_json(
    config: *const FcbdrConfig,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FcbdrStatus {
    guard(|| {
        let cfg = ref_arg(config, "config")?;
        let needed = out_arg(needed, "needed")?;
        let text = cfg.0.to_json();
        *needed = text.len() + 1;
        if cap < *needed {
            return fail(
                FcbdrStatus::BufferTooSmall,
                format!("need {} bytes", *needed),
            );
        }
        let out = slice_out(buf as *mut u8, cap, "buf")?;
        out[..text.len()].copy_from_slice(text.as_bytes());
        out[text.len()] = 0;
        Ok(())
    })
}

/// # Safety
/// `config` must come from `fcbdr_config_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_config_free(config: *mut FcbdrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run every method and seed in `config`, writing metrics.jsonl,
/// selection.jsonl and summary.json to `out_dir`.
///
/// # Safety
/// `config` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_run_experiment(
    config: *const FcbdrConfig,
    out_dir: *const c_char,
) -> FcbdrStatus {
    guard(|| {
        let cfg = ref_arg(config, "config")?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        run_experiment(&cfg.0, &dir)?;
        Ok(())
    })
}

/// Fresh model with an empty head; `hidden` lists the hidden layer widths.
/// `classes` (may be empty) are added to the head as one block.
///
/// # Safety
/// `hidden` must hold `n_hidden` values, `classes` `n_classes` values, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_new(
    d_in: usize,
    hidden: *const usize,
    n_hidden: usize,
    classes: *const usize,
    n_classes: usize,
    seed: u64,
    out: *mut *mut FcbdrModel,
) -> FcbdrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let mut model = Model::new(d_in, slice_arg(hidden, n_hidden, "hidden")?, seed)?;
        let classes = slice_arg(classes, n_classes, "classes")?;
        if !classes.is_empty() {
            model = model.expand_head(classes, seed)?;
        }
        *out = Box::into_raw(Box::new(FcbdrModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_load(
    path: *const c_char,
    out: *mut *mut FcbdrModel,
) -> FcbdrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = load_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(FcbdrModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_save(
    model: *const FcbdrModel,
    path: *const c_char,
) -> FcbdrStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        save_checkpoint(&m.0, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from `fcbdr_model_new`/`fcbdr_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_free(model: *mut FcbdrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width of `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_input_dim(model: *const FcbdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Number of head classes of `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_num_classes(model: *const FcbdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_classes())
}

/// Predicted class id for each of `n` row-major inputs of width
/// `input_dim`.
///
/// # Safety
/// `x` must hold `n * input_dim` values and `out_classes` `n` values.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_model_predict(
    model: *const FcbdrModel,
    x: *const f64,
    n: usize,
    input_dim: usize,
    out_classes: *mut usize,
) -> FcbdrStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if input_dim != m.0.input_dim() {
            return fail(
                FcbdrStatus::InvalidDimension,
                format!("model takes {} inputs, got {input_dim}", m.0.input_dim()),
            );
        }
        let x = matrix_arg(x, n, input_dim)?;
        let out = slice_out(out_classes, n, "out_classes")?;
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = m.0.predict(x.row(i))?;
        }
        Ok(())
    })
}

/// Singular values of a row-major `rows × cols` matrix, descending. `out`
/// must hold `min(rows, cols)` values.
///
/// # Safety
/// `data` must hold `rows * cols` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_singular_values(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> FcbdrStatus {
    guard(|| {
        let x = matrix_arg(data, rows, cols)?;
        let need = rows.min(cols);
        if out_len < need {
            return fail(FcbdrStatus::BufferTooSmall, format!("need {need} values"));
        }
        let s = singular_values(&x)?;
        slice_out(out, need, "out")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Row leverage scores of a row-major `rows × cols` matrix. With
/// `full_rank` false only numerically nonzero directions count. Writes
/// `rows` scores and the rank used.
///
/// # Safety
/// `data` must hold `rows * cols` values, `out_scores` `rows` values, and
/// `out_rank` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcbdr_leverage_scores(
    data: *const f64,
    rows: usize,
    cols: usize,
    full_rank: bool,
    out_scores: *mut f64,
    out_rank: *mut usize,
) -> FcbdrStatus {
    guard(|| {
        let x = matrix_arg(data, rows, cols)?;
        let rank_out = out_arg(out_rank, "out_rank")?;
        let scores_out = slice_out(out_scores, rows, "out_scores")?;
        let policy = if full_rank {
            RankPolicy::Full
        } else {
            RankPolicy::Numerical
        };
        let (scores, rank) = row_leverage(&thin_svd(&x)?, policy);
        scores_out.copy_from_slice(&scores);
        *rank_out = rank;
        Ok(())
    })
}
