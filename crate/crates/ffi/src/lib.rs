//! C ABI over retina-fusion.
//!
//! Models are opaque `RfModel` handles created by `rf_model_*` constructors
//! and released with `rf_model_free`. Every fallible function returns an
//! `RfStatus`; on failure `rf_last_error` holds a message for the calling
//! thread until its next failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use retina_fusion::fusion::{load_checkpoint, save_checkpoint, CheckpointMeta, FusionModel, FusionSpec};
use retina_fusion::metrics::{compute_metrics, confusion};
use retina_fusion::nn::{Family, ScalePreset};
use retina_fusion::tensor::Tensor;
use retina_fusion::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Corrupt = 5,
    Io = 6,
    NonFinite = 7,
    Panic = 8,
    Internal = 9,
}

/// Backbone family codes accepted by `rf_model_new`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfFamily {
    Residual = 0,
    Mbconv = 1,
    Dense = 2,
}

/// Architecture scale codes accepted by `rf_model_new`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfScale {
    Desk = 0,
    Paper = 1,
}

/// Confusion counts and per-class metrics, diabetic being the positive class.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RfMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub normal_precision: f64,
    pub normal_recall: f64,
    pub normal_f1: f64,
    pub diabetic_precision: f64,
    pub diabetic_recall: f64,
    pub diabetic_f1: f64,
}

/// Opaque model handle.
pub struct RfModel {
    inner: FusionModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::NonScalarLoss(_) => RfStatus::InvalidArgument,
            Error::ShapeMismatch { .. } | Error::Shape { .. } => RfStatus::Shape,
            Error::Config(_) => RfStatus::Config,
            Error::Corrupt { .. } | Error::Decode { .. } => RfStatus::Corrupt,
            Error::Io { .. } => RfStatus::Io,
            Error::NonFinite(_) => RfStatus::NonFinite,
            _ => RfStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: RfStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RfStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(RfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(fail(RfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(RfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn store_model(out: *mut *mut RfModel, model: FusionModel<f32>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(RfStatus::NullPointer, "out is null"));
    }
    *out = Box::into_raw(Box::new(RfModel { inner: model }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure, or NULL if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialized feature-fusion model over `n` families
/// (`RfFamily` codes) at the given `RfScale`.
///
/// # Safety
/// `families` must point to `n` readable `u32` values and `out` must be a
/// valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rf_model_new(
    families: *const u32,
    n: usize,
    scale: u32,
    seed: u64,
    out: *mut *mut RfModel,
) -> RfStatus {
    guard(|| {
        if families.is_null() {
            return Err(fail(RfStatus::NullPointer, "families is null"));
        }
        let codes = std::slice::from_raw_parts(families, n);
        let families = codes
            .iter()
            .map(|&c| match c {
                0 => Ok(Family::Residual),
                1 => Ok(Family::Mbconv),
                2 => Ok(Family::Dense),
                other => Err(fail(RfStatus::InvalidArgument, format!("unknown family code {other}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scale = match scale {
            0 => ScalePreset::Desk,
            1 => ScalePreset::Paper,
            other => return Err(fail(RfStatus::InvalidArgument, format!("unknown scale code {other}"))),
        };
        let spec = FusionSpec::preset(&families, scale);
        spec.validate()?;
        store_model(out, FusionModel::seeded(&spec, seed)?)
    })
}

/// Builds a model from a TOML fusion spec (the `[model]` table of a run
/// config, without the header).
///
/// # Safety
/// `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_model_from_spec_toml(spec_toml: *const c_char, seed: u64, out: *mut *mut RfModel) -> RfStatus {
    guard(|| {
        let text = string_arg(spec_toml, "spec_toml")?;
        let spec = FusionSpec::from_toml(&text)?;
        store_model(out, FusionModel::seeded(&spec, seed)?)
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_model_load(path: *const c_char, out: *mut *mut RfModel) -> RfStatus {
    guard(|| {
        let path = PathBuf::from(string_arg(path, "path")?);
        let (model, _) = load_checkpoint::<f32>(&path)?;
        store_model(out, model)
    })
}

/// Writes a checkpoint file recording `seed`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rf_model_save(model: *const RfModel, path: *const c_char, seed: u64) -> RfStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let path = PathBuf::from(string_arg(path, "path")?);
        let meta = CheckpointMeta {
            seed,
            ..CheckpointMeta::default()
        };
        save_checkpoint(&model.inner, &meta, &path)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_model_free(model: *mut RfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length S of the `[N, 3, S, S]` input the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_model_input_size(model: *const RfModel, out: *mut usize) -> RfStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        if out.is_null() {
            return Err(fail(RfStatus::NullPointer, "out is null"));
        }
        *out = model.inner.input_size();
        Ok(())
    })
}

/// Number of trainable parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_model_param_count(model: *const RfModel, out: *mut usize) -> RfStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        if out.is_null() {
            return Err(fail(RfStatus::NullPointer, "out is null"));
        }
        *out = model.inner.param_count();
        Ok(())
    })
}

/// Diabetic-class probabilities of `n` normalized images laid out as
/// `[n, 3, S, S]` floats, written to `out[0..n]`.
///
/// # Safety
/// `images` must hold `n * 3 * S * S` floats and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn rf_model_predict_proba(
    model: *const RfModel,
    images: *const f32,
    n: usize,
    out: *mut f32,
) -> RfStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        if images.is_null() || out.is_null() {
            return Err(fail(RfStatus::NullPointer, "images or out is null"));
        }
        if n == 0 {
            return Err(fail(RfStatus::InvalidArgument, "n must be >= 1"));
        }
        let s = model.inner.input_size();
        let len = n
            .checked_mul(3 * s * s)
            .ok_or_else(|| fail(RfStatus::InvalidArgument, "n is too large"))?;
        let data = std::slice::from_raw_parts(images, len).to_vec();
        let x = Tensor::from_vec(&[n, 3, s, s], data)?;
        let p = model.inner.predict_proba(&x)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(p.data());
        Ok(())
    })
}

/// Confusion counts and metrics of `n` true and predicted labels (0 normal,
/// 1 diabetic).
///
/// # Safety
/// `truth` and `predicted` must hold `n` bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rf_metrics_compute(
    truth: *const u8,
    predicted: *const u8,
    n: usize,
    out: *mut RfMetrics,
) -> RfStatus {
    guard(|| {
        if truth.is_null() || predicted.is_null() || out.is_null() {
            return Err(fail(RfStatus::NullPointer, "truth, predicted or out is null"));
        }
        let truth = std::slice::from_raw_parts(truth, n);
        let predicted = std::slice::from_raw_parts(predicted, n);
        let report = compute_metrics(&confusion(truth, predicted)?)?;
        let cm = report.confusion;
        *out = RfMetrics {
            tp: cm.tp,
            tn: cm.tn,
            fp: cm.fp,
            fn_: cm.fn_,
            accuracy: report.accuracy,
            normal_precision: report.normal.precision,
            normal_recall: report.normal.recall,
            normal_f1: report.normal.f1,
            diabetic_precision: report.diabetic.precision,
            diabetic_recall: report.diabetic.recall,
            diabetic_f1: report.diabetic.f1,
        };
        Ok(())
    })
}
