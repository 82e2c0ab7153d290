//! C ABI for loading, pruning and running saved loadcast models.
//!
//! Models are opaque `LcModel` handles created by `lc_model_load` (or
//! `lc_model_from_bytes`, `lc_model_prune`) and released with `lc_model_free`.
//! Every fallible call returns an `LcStatus`; on failure the message is
//! available from `lc_last_error_message` on the same thread. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use loadcast::matrix::Matrix;
use loadcast::model::ForecastModel;
use loadcast::prune::{prune_network, PruneMethod, PruneSpec};
use loadcast::Error;

/// Status codes. Values 2 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    /// Invalid configuration or shape.
    Config = 2,
    /// Unreadable, malformed or insufficient data.
    Data = 3,
    /// Non-finite values.
    Numeric = 4,
    /// Internal invariant violated.
    Internal = 5,
    /// Null pointer or invalid argument.
    InvalidArgument = 6,
    /// A Rust panic was caught.
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcPruneMethod {
    L1 = 0,
    Random = 1,
}

/// Opaque model handle.
pub struct LcModel {
    inner: ForecastModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> LcStatus {
    match e.exit_code() {
        2 => LcStatus::Config,
        3 => LcStatus::Data,
        4 => LcStatus::Numeric,
        _ => LcStatus::Internal,
    }
}

struct Failure(LcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(LcStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside loadcast".into());
            LcStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const LcModel) -> Result<&'a LcModel, Failure> {
    model
        .as_ref()
        .ok_or_else(|| invalid("model handle is null"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn store(out: *mut *mut LcModel, model: ForecastModel) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(LcModel { inner: model }));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next loadcast call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file into a new handle stored at `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_model_load(path: *const c_char, out: *mut *mut LcModel) -> LcStatus {
    guard(|| {
        let path = path_arg(path)?;
        store(out, ForecastModel::load(path)?)
    })
}

/// Decodes a model from `len` bytes at `data`.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut LcModel,
) -> LcStatus {
    guard(|| {
        if data.is_null() {
            return Err(invalid("data is null"));
        }
        let bytes = std::slice::from_raw_parts(data, len);
        store(out, ForecastModel::from_bytes(bytes)?)
    })
}

/// Writes the model to `path` atomically.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lc_model_save(model: *const LcModel, path: *const c_char) -> LcStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.inner.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_model_free(model: *mut LcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input features per time step, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_feature_count(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.network.features)
}

/// Window length k, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_lookback(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.network.lookback)
}

/// Index of the target feature, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_target_feature(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.target_feature)
}

/// Trainable parameter count, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_param_count(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.network.param_count())
}

/// Multiply-accumulates of one single-step forecast, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_flop_count(model: *const LcModel) -> u64 {
    model
        .as_ref()
        .map_or(0, |m| m.inner.network.flop_count_per_forecast())
}

/// Recursive `steps`-ahead forecast in original units.
///
/// `window` holds `rows × cols` values, row-major, oldest row first, with
/// `rows` equal to the lookback and `cols` to the feature count. `out` receives
/// `steps × cols` values and `out_len` must be at least that.
///
/// # Safety
/// `model` must be a live handle; `window` must point to `rows × cols`
/// readable doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_model_forecast(
    model: *const LcModel,
    window: *const f64,
    rows: usize,
    cols: usize,
    steps: usize,
    out: *mut f64,
    out_len: usize,
) -> LcStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let net = &m.network;
        if window.is_null() || out.is_null() {
            return Err(invalid("window or output buffer is null"));
        }
        if rows != net.lookback || cols != net.features {
            return Err(Failure(
                LcStatus::Config,
                format!(
                    "window is {rows}x{cols}, model expects {}x{}",
                    net.lookback, net.features
                ),
            ));
        }
        if steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        let needed = steps
            .checked_mul(cols)
            .ok_or_else(|| invalid("steps × cols overflows"))?;
        if out_len < needed {
            return Err(invalid("output buffer too small"));
        }
        let mut values = std::slice::from_raw_parts(window, rows * cols).to_vec();
        if let Some(s) = &m.scaler {
            for (i, v) in values.iter_mut().enumerate() {
                *v = s.scale_value(i % cols, *v);
            }
        }
        let input = Matrix::from_vec(rows, cols, values)?;
        let pred = net.forecast(&input, steps)?;
        let dest = std::slice::from_raw_parts_mut(out, needed);
        for (i, (d, &p)) in dest.iter_mut().zip(pred.as_slice()).enumerate() {
            *d = match &m.scaler {
                Some(s) => s.invert_value(i % cols, p),
                None => p,
            };
        }
        Ok(())
    })
}

/// Structured pruning into a new handle; the input handle is unchanged.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_model_prune(
    model: *const LcModel,
    method: LcPruneMethod,
    amount: f64,
    seed: u64,
    out: *mut *mut LcModel,
) -> LcStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let spec = PruneSpec {
            method: match method {
                LcPruneMethod::L1 => PruneMethod::L1,
                LcPruneMethod::Random => PruneMethod::Random,
            },
            amount,
            seed,
        };
        let (network, _) = prune_network(&m.network, &spec)?;
        store(
            out,
            ForecastModel {
                network,
                ..m.clone()
            },
        )
    })
}
