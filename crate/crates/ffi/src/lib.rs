//! C ABI over the otom library.
//!
//! Functions return an [`OtomStatus`]. On failure, a message describing the
//! most recent error on the calling thread is available from
//! [`otom_last_error`]. Models are opaque handles released with
//! [`otom_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use otom::fit::{fit_bloch, FitConfig};
use otom::nn::{load_model, Model};
use otom::physics::{simulate_fingerprint, PoolConstants, ScanPoint, TissueParams};
use otom::{OtomError, Schedule};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtomStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Parse = 3,
    Format = 4,
    Numeric = 5,
    Io = 6,
    Config = 7,
    Panic = 8,
}

/// Tissue parameters in SI units: kmw (1/s), m0m (fraction of water M0),
/// t2m (s), t1w (s).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtomTissue {
    pub kmw: f64,
    pub m0m: f64,
    pub t2m: f64,
    pub t1w: f64,
}

/// One dynamic scan: b1 (μT), omega (ppm), ts (s), td (s).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtomScanPoint {
    pub b1: f64,
    pub omega: f64,
    pub ts: f64,
    pub td: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtomFitResult {
    pub params: OtomTissue,
    pub residual_rms: f64,
    pub cost: f64,
    pub iterations: u32,
    /// 1 when the best start converged, else 0.
    pub converged: i32,
    pub start_index: u32,
}

/// Opaque trained model.
pub struct OtomModel {
    inner: Model,
}

impl From<TissueParams> for OtomTissue {
    fn from(t: TissueParams) -> Self {
        Self {
            kmw: t.kmw,
            m0m: t.m0m,
            t2m: t.t2m,
            t1w: t.t1w,
        }
    }
}

impl From<OtomTissue> for TissueParams {
    fn from(t: OtomTissue) -> Self {
        TissueParams::new(t.kmw, t.m0m, t.t2m, t.t1w)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &OtomError) -> OtomStatus {
    match err {
        OtomError::Domain(_) => OtomStatus::Domain,
        OtomError::Parse { .. } => OtomStatus::Parse,
        OtomError::Format(_) => OtomStatus::Format,
        OtomError::Numeric(_) => OtomStatus::Numeric,
        OtomError::Io(_) => OtomStatus::Io,
        OtomError::Config(_) | OtomError::Json(_) => OtomStatus::Config,
    }
}

enum Failure {
    Null(&'static str),
    Lib(OtomError),
}

impl From<OtomError> for Failure {
    fn from(e: OtomError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OtomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OtomStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            OtomStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            OtomStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `scans` must point to `n` readable elements when `n > 0`.
unsafe fn schedule_from(scans: *const OtomScanPoint, n: usize) -> Result<Schedule, Failure> {
    if n == 0 {
        return Err(OtomError::Domain("schedule is empty".into()).into());
    }
    let scans = std::slice::from_raw_parts(non_null(scans, "scans")?, n);
    Ok(Schedule::new(
        scans
            .iter()
            .map(|s| ScanPoint::new(s.b1, s.omega, s.ts, s.td))
            .collect(),
    )?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn otom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulate `n` signals into `out` with the default pool constants.
///
/// # Safety
/// `tissue` must be valid; `scans` and `out` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn otom_simulate_fingerprint(
    tissue: *const OtomTissue,
    scans: *const OtomScanPoint,
    n: usize,
    out: *mut f64,
) -> OtomStatus {
    guard(|| {
        let tissue: TissueParams = (*non_null(tissue, "tissue")?).into();
        let schedule = schedule_from(scans, n)?;
        let out = std::slice::from_raw_parts_mut(non_null(out, "out")?.cast_mut(), n);
        let fp = simulate_fingerprint(&tissue, &PoolConstants::default(), &schedule.points)?;
        out.copy_from_slice(fp.values());
        Ok(())
    })
}

/// Load an OTOMNN1 weight file (bi-LSTM or FCNN).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otom_model_load(
    path: *const c_char,
    out: *mut *mut OtomModel,
) -> OtomStatus {
    guard(|| {
        let path = CStr::from_ptr(non_null(path, "path")?);
        let out = non_null(out, "out")?.cast_mut();
        *out = std::ptr::null_mut();
        let path = path
            .to_str()
            .map_err(|_| OtomError::Config("path is not UTF-8".into()))?;
        let inner = load_model(path)?;
        *out = Box::into_raw(Box::new(OtomModel { inner }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`otom_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn otom_model_free(model: *mut OtomModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Estimate tissue parameters from one fingerprint. FCNN models accept
/// only the schedule they were trained on.
///
/// # Safety
/// `model` must be a live handle; `scans` and `signal` must hold `n`
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otom_model_predict(
    model: *const OtomModel,
    scans: *const OtomScanPoint,
    n: usize,
    signal: *const f64,
    out: *mut OtomTissue,
) -> OtomStatus {
    guard(|| {
        let model = &*non_null(model, "model")?;
        let schedule = schedule_from(scans, n)?;
        let signal = std::slice::from_raw_parts(non_null(signal, "signal")?, n);
        let out = non_null(out, "out")?.cast_mut();
        let t = match &model.inner {
            Model::BiLstm(m) => m.predict(signal, &schedule)?,
            Model::Fcnn(m) => {
                if m.schedule().points != schedule.points {
                    return Err(OtomError::Domain(
                        "FCNN was trained on a different schedule".into(),
                    )
                    .into());
                }
                m.predict(signal)?
            }
        };
        *out = t.into();
        Ok(())
    })
}

/// Multi-start least-squares fit with default bounds and tolerances.
///
/// # Safety
/// `scans` and `signal` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otom_fit(
    scans: *const OtomScanPoint,
    n: usize,
    signal: *const f64,
    n_starts: u32,
    seed: u64,
    out: *mut OtomFitResult,
) -> OtomStatus {
    guard(|| {
        let schedule = schedule_from(scans, n)?;
        let signal = std::slice::from_raw_parts(non_null(signal, "signal")?, n);
        let out = non_null(out, "out")?.cast_mut();
        let config = FitConfig {
            n_starts: n_starts as usize,
            seed,
            ..FitConfig::default()
        };
        let r = fit_bloch(signal, &schedule, &config)?;
        *out = OtomFitResult {
            params: r.params.into(),
            residual_rms: r.residual_rms,
            cost: r.cost,
            iterations: r.iterations as u32,
            converged: r.converged as i32,
            start_index: r.start_index as u32,
        };
        Ok(())
    })
}
