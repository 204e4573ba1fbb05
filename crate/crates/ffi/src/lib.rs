//! C ABI over the `timecf` forecaster.
//!
//! Every function returns a [`TimecfStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`timecf_last_error`]. Models
//! are opaque handles created by `timecf_model_new` or `timecf_model_load`
//! and released with `timecf_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use timecf::model::{Batch, Model, ModelConfig};
use timecf::tensor::{Tape, Tensor};
use timecf::train::samfre_loss;
use timecf::TimeCfError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimecfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Checkpoint = 4,
    Io = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct TimecfModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &TimeCfError) -> TimecfStatus {
    match e {
        TimeCfError::Dimension { .. } | TimeCfError::Batch { .. } => TimecfStatus::Dimension,
        TimeCfError::Checkpoint(_) | TimeCfError::Json(_) => TimecfStatus::Checkpoint,
        TimeCfError::Io(_) | TimeCfError::Path { .. } => TimecfStatus::Io,
        TimeCfError::Evaluation(_) | TimeCfError::NonFiniteLoss { .. } => TimecfStatus::Numeric,
        _ => TimecfStatus::InvalidArgument,
    }
}

struct Failure(TimecfStatus, String);

impl From<TimeCfError> for Failure {
    fn from(e: TimeCfError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TimecfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TimecfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TimecfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TimecfStatus::Panic
        }
    }
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TimecfStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn model<'a>(p: *const TimecfModel) -> Result<&'a Model, Failure> {
    p.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn timecf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn timecf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a randomly initialized model from a JSON model configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut TimecfModel,
) -> TimecfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = string(config_json, "config_json")?;
        let cfg: ModelConfig = serde_json::from_str(text)
            .map_err(|e| Failure(TimecfStatus::InvalidArgument, format!("config: {e}")))?;
        let model = Model::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(TimecfModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint written by `timecf_model_save` or the `timecf` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_load(
    path: *const c_char,
    out: *mut *mut TimecfModel,
) -> TimecfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(string(path, "path")?);
        let model = Model::load_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(TimecfModel { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_save(
    handle: *const TimecfModel,
    path: *const c_char,
) -> TimecfStatus {
    guard(|| {
        let m = model(handle)?;
        let path = PathBuf::from(string(path, "path")?);
        m.save_checkpoint(&path)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_free(handle: *mut TimecfModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_parameter_count(
    handle: *const TimecfModel,
    out: *mut usize,
) -> TimecfStatus {
    guard(|| {
        let m = model(handle)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.parameter_count();
        Ok(())
    })
}

/// Lookback length, horizon and calendar feature width of the model.
///
/// # Safety
/// `handle` must come from this library; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_dims(
    handle: *const TimecfModel,
    lookback: *mut usize,
    horizon: *mut usize,
    time_features: *mut usize,
) -> TimecfStatus {
    guard(|| {
        let cfg = model(handle)?.config();
        *lookback.as_mut().ok_or_else(|| null("lookback"))? = cfg.lookback;
        *horizon.as_mut().ok_or_else(|| null("horizon"))? = cfg.horizon;
        *time_features
            .as_mut()
            .ok_or_else(|| null("time_features"))? = cfg.time_features;
        Ok(())
    })
}

/// Forecasts `batch` univariate series.
///
/// `history` is `batch x lookback` raw values, `marks` is
/// `batch x lookback x time_features` calendar features and `out` receives
/// `batch x horizon` values; all row-major. `out_len` must equal
/// `batch * horizon`.
///
/// # Safety
/// Each pointer must reference at least the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn timecf_model_forecast(
    handle: *const TimecfModel,
    history: *const f64,
    marks: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> TimecfStatus {
    guard(|| {
        let m = model(handle)?;
        let cfg = m.config();
        let (t, ft, f) = (cfg.lookback, cfg.time_features, cfg.horizon);
        if batch == 0 {
            return Err(Failure(TimecfStatus::InvalidArgument, "batch is 0".into()));
        }
        if out_len != batch * f {
            return Err(Failure(
                TimecfStatus::Dimension,
                format!("out_len {out_len} but batch x horizon is {}", batch * f),
            ));
        }
        let history = slice(history, batch * t, "history")?;
        let marks = slice(marks, batch * t * ft, "marks")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let xs: Vec<&[f64]> = history.chunks(t).collect();
        let ms: Vec<&[f64]> = marks.chunks(t * ft).collect();
        let preds = m.predict_batch(&Batch::new(cfg, &xs, &ms, None)?)?;
        let out = std::slice::from_raw_parts_mut(out, out_len);
        for (dst, p) in out.chunks_mut(f).zip(preds) {
            dst.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// Blended loss of one forecast against its target:
/// `alpha * mean |rfft(pred) - rfft(target)| + (1 - alpha) * mse`.
/// Each of `total`, `freq` and `mse` may be null.
///
/// # Safety
/// `pred` and `target` must each reference `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn timecf_samfre_loss(
    pred: *const f64,
    target: *const f64,
    len: usize,
    alpha: f64,
    total: *mut f64,
    freq: *mut f64,
    mse: *mut f64,
) -> TimecfStatus {
    guard(|| {
        if len == 0 {
            return Err(Failure(TimecfStatus::InvalidArgument, "len is 0".into()));
        }
        let p = slice(pred, len, "pred")?;
        let y = slice(target, len, "target")?;
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(p.to_vec()));
        let y = tape.constant(Tensor::vector(y.to_vec()));
        let loss = samfre_loss(&mut tape, p, y, alpha)?.breakdown(&tape);
        for (dst, v) in [(total, loss.total), (freq, loss.freq), (mse, loss.mse)] {
            if let Some(dst) = dst.as_mut() {
                *dst = v;
            }
        }
        Ok(())
    })
}
