//! C ABI for `wdm`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`WdmStatus`]; on failure a message is stored per thread and
//! can be read with [`wdm_last_error`]. Panics never unwind into C: they are
//! caught and reported as [`WdmStatus::Panic`].
//!
//! # Safety
//!
//! All pointer arguments must be null or valid for the access the function
//! performs: handles must come from this library and not be freed yet,
//! strings must be NUL-terminated, and buffers must hold at least the stated
//! number of elements. Null pointers are detected and reported.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wdm::checkpoint::{load_checkpoint, save_checkpoint};
use wdm::denoiser::Denoiser;
use wdm::experiment::{Experiment, ExperimentConfig};
use wdm::prove::run_suite;
use wdm::verify::{welch_test, VerificationReport};
use wdm::WdmError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Dimension = 10,
    Parameter = 11,
    Numeric = 12,
    Contract = 13,
    Statistical = 14,
    Config = 15,
    Parse = 16,
    Corrupt = 17,
    VersionMismatch = 18,
    Io = 19,
    Panic = 99,
}

impl From<&WdmError> for WdmStatus {
    fn from(e: &WdmError) -> Self {
        match e {
            WdmError::Dimension(_) => WdmStatus::Dimension,
            WdmError::Parameter(_) => WdmStatus::Parameter,
            WdmError::Numeric(_) => WdmStatus::Numeric,
            WdmError::Contract(_) => WdmStatus::Contract,
            WdmError::Statistical(_) => WdmStatus::Statistical,
            WdmError::Config(_) => WdmStatus::Config,
            WdmError::Parse { .. } => WdmStatus::Parse,
            WdmError::Corrupt(_) => WdmStatus::Corrupt,
            WdmError::VersionMismatch { .. } => WdmStatus::VersionMismatch,
            WdmError::Io(_) => WdmStatus::Io,
        }
    }
}

/// Experiment configuration.
pub struct WdmConfig(ExperimentConfig);

/// Configuration plus the schedule, task data and watermark it describes.
pub struct WdmExperiment(Experiment);

/// A trained noise-prediction network.
pub struct WdmModel(Denoiser);

/// Outcome of an ownership test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WdmVerification {
    pub mu_s: f64,
    pub mu_c: f64,
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// 1 when the watermark is detected, 0 otherwise.
    pub verdict: i32,
}

impl From<&VerificationReport> for WdmVerification {
    fn from(r: &VerificationReport) -> Self {
        WdmVerification {
            mu_s: r.mu_s,
            mu_c: r.mu_c,
            t_stat: r.t_stat,
            dof: r.dof,
            p_value: r.p_value,
            alpha: r.alpha,
            verdict: r.verdict as i32,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Status(WdmStatus, String),
    Wdm(WdmError),
}

impl From<WdmError> for Failure {
    fn from(e: WdmError) -> Self {
        Failure::Wdm(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> WdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WdmStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Wdm(e))) => {
            set_error(e.to_string());
            WdmStatus::from(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            WdmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(WdmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(WdmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let slot = borrow_mut(out, "output pointer")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated)
/// and returns the number of bytes the full message needs, including the
/// terminator. Returns 0 when there is no error. Passing a null `buf` or
/// `len` 0 only queries the size.
#[no_mangle]
pub unsafe extern "C" fn wdm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn wdm_config_default(out: *mut *mut WdmConfig) -> WdmStatus {
    guard(|| put(out, WdmConfig(ExperimentConfig::default())))
}

#[no_mangle]
pub unsafe extern "C" fn wdm_config_from_toml(text: *const c_char, out: *mut *mut WdmConfig) -> WdmStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(string(text, "text")?)?;
        cfg.validate()?;
        put(out, WdmConfig(cfg))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wdm_config_load(path: *const c_char, out: *mut *mut WdmConfig) -> WdmStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(Path::new(string(path, "path")?))?;
        cfg.validate()?;
        put(out, WdmConfig(cfg))
    })
}

/// Applies one `key=value` override, e.g. `"train.epochs=50"`. The config is
/// left unchanged on failure.
#[no_mangle]
pub unsafe extern "C" fn wdm_config_set(cfg: *mut WdmConfig, assignment: *const c_char) -> WdmStatus {
    guard(|| {
        let cfg = borrow_mut(cfg, "config")?;
        let next = cfg.0.with_overrides(&[string(assignment, "assignment")?.to_string()])?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Writes the 64-character hex config hash plus NUL into `buf` (at least 65 bytes).
#[no_mangle]
pub unsafe extern "C" fn wdm_config_hash(cfg: *const WdmConfig, buf: *mut c_char, len: usize) -> WdmStatus {
    guard(|| {
        let hash = borrow(cfg, "config")?.0.hash()?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < hash.len() + 1 {
            return Err(Failure::Status(
                WdmStatus::BufferTooSmall,
                format!("hash needs {} bytes, buffer has {len}", hash.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(hash.as_ptr() as *const c_char, buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wdm_config_free(cfg: *mut WdmConfig) {
    free(cfg)
}

#[no_mangle]
pub unsafe extern "C" fn wdm_experiment_new(cfg: *const WdmConfig, out: *mut *mut WdmExperiment) -> WdmStatus {
    guard(|| {
        let cfg = borrow(cfg, "config")?.0.clone();
        cfg.validate()?;
        put(out, WdmExperiment(Experiment::new(cfg)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wdm_experiment_free(exp: *mut WdmExperiment) {
    free(exp)
}

#[no_mangle]
pub unsafe extern "C" fn wdm_train_baseline(exp: *const WdmExperiment, out: *mut *mut WdmModel) -> WdmStatus {
    guard(|| put(out, WdmModel(borrow(exp, "experiment")?.0.train_baseline()?.model)))
}

#[no_mangle]
pub unsafe extern "C" fn wdm_train_control(exp: *const WdmExperiment, out: *mut *mut WdmModel) -> WdmStatus {
    guard(|| put(out, WdmModel(borrow(exp, "experiment")?.0.train_control()?.model)))
}

/// Embeds the watermark. `baseline` may be null in scratch mode and is
/// required in fine-tune mode.
#[no_mangle]
pub unsafe extern "C" fn wdm_embed(
    exp: *const WdmExperiment,
    baseline: *const WdmModel,
    out: *mut *mut WdmModel,
) -> WdmStatus {
    guard(|| {
        let exp = &borrow(exp, "experiment")?.0;
        let base = baseline.as_ref().map(|m| &m.0);
        put(out, WdmModel(exp.embed(base)?.model))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wdm_model_load(path: *const c_char, out: *mut *mut WdmModel) -> WdmStatus {
    guard(|| {
        let ckpt = load_checkpoint(Path::new(string(path, "path")?))?;
        put(out, WdmModel(ckpt.model))
    })
}

/// Saves `model` together with the experiment's noise schedule.
#[no_mangle]
pub unsafe extern "C" fn wdm_model_save(
    model: *const WdmModel,
    exp: *const WdmExperiment,
    path: *const c_char,
) -> WdmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let exp = &borrow(exp, "experiment")?.0;
        save_checkpoint(model, &exp.sched, Path::new(string(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wdm_model_param_count(model: *const WdmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.arch().param_count())
}

#[no_mangle]
pub unsafe extern "C" fn wdm_model_free(model: *mut WdmModel) {
    free(model)
}

/// Runs watermark extraction and writes the samples row-major into `buf`.
/// `rows` and `cols` receive the shape; if `len` is smaller than
/// `rows * cols` nothing is copied and `BufferTooSmall` is returned, so a
/// first call with `len = 0` queries the shape.
#[no_mangle]
pub unsafe extern "C" fn wdm_extract(
    exp: *const WdmExperiment,
    model: *const WdmModel,
    buf: *mut f64,
    len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> WdmStatus {
    guard(|| {
        let exp = &borrow(exp, "experiment")?.0;
        let model = &borrow(model, "model")?.0;
        let samples = exp.extract(model)?;
        let (n, d) = samples.dims2()?;
        *borrow_mut(rows, "rows")? = n;
        *borrow_mut(cols, "cols")? = d;
        if len < n * d {
            return Err(Failure::Status(
                WdmStatus::BufferTooSmall,
                format!("extraction needs {} values, buffer has {len}", n * d),
            ));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(samples.data().as_ptr(), buf, n * d);
        Ok(())
    })
}

/// Tests whether `suspect` carries the watermark, using `control` as the
/// independent reference model.
#[no_mangle]
pub unsafe extern "C" fn wdm_verify(
    exp: *const WdmExperiment,
    suspect: *const WdmModel,
    control: *const WdmModel,
    out: *mut WdmVerification,
) -> WdmStatus {
    guard(|| {
        let exp = &borrow(exp, "experiment")?.0;
        let r = exp.verify_models(&borrow(suspect, "suspect")?.0, &borrow(control, "control")?.0)?;
        *borrow_mut(out, "output")? = WdmVerification::from(&r);
        Ok(())
    })
}

/// Verification on precomputed watermark similarity scores.
#[no_mangle]
pub unsafe extern "C" fn wdm_verify_scores(
    d_s: *const f64,
    n_s: usize,
    d_c: *const f64,
    n_c: usize,
    alpha: f64,
    out: *mut WdmVerification,
) -> WdmStatus {
    guard(|| {
        let r = wdm::verify::verify(slice(d_s, n_s, "d_s")?, slice(d_c, n_c, "d_c")?, alpha)?;
        *borrow_mut(out, "output")? = WdmVerification::from(&r);
        Ok(())
    })
}

/// One-sided Welch test that `d_c` has the larger mean.
#[no_mangle]
pub unsafe extern "C" fn wdm_welch_test(
    d_s: *const f64,
    n_s: usize,
    d_c: *const f64,
    n_c: usize,
    t_stat: *mut f64,
    dof: *mut f64,
    p_value: *mut f64,
) -> WdmStatus {
    guard(|| {
        let w = welch_test(slice(d_s, n_s, "d_s")?, slice(d_c, n_c, "d_c")?)?;
        *borrow_mut(t_stat, "t_stat")? = w.t_stat;
        *borrow_mut(dof, "dof")? = w.dof;
        *borrow_mut(p_value, "p_value")? = w.p_value;
        Ok(())
    })
}

/// Runs the kernel identity suite with the experiment's options; `passed`
/// receives 1 when every check behaves as expected.
#[no_mangle]
pub unsafe extern "C" fn wdm_prove(exp: *const WdmExperiment, passed: *mut i32) -> WdmStatus {
    guard(|| {
        let exp = &borrow(exp, "experiment")?.0;
        let report = run_suite(&exp.cfg.prove)?;
        *borrow_mut(passed, "passed")? = report.all_passed as i32;
        Ok(())
    })
}
