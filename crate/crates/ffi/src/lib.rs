//! C ABI over `willow-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_builtin`/`*_load`
//! constructors and released by the matching `*_free`. Every fallible call
//! returns a [`WillowStatus`]; on failure the message is available through
//! [`willow_last_error`]. Status values equal the CLI exit codes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use willow::model::{resolve_model, FiniteMeasure, MultitypeModel};
use willow::numerics::{ExtinctionFields, SolverConfig};
use willow::particle::{simulate_with, ParticleConfig};
use willow::paths::MeasurePath;
use willow::spectral::generalized_eigen;
use willow::streams::stream;
use willow::verify::{run_check, Status, Suite, VerifyConfig};
use willow::williams::{extinction_cdf, sample_conditioned_superprocess, ImmigrationConfig};
use willow::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WillowStatus {
    Ok = 0,
    /// A verification check ran and failed.
    CheckFailed = 1,
    /// Null pointer, bad index, bad string or unknown name.
    Usage = 2,
    /// Invalid model or violated precondition.
    Model = 3,
    /// Solver or quadrature failure.
    Numeric = 4,
    /// Sampling or population budget exhausted.
    Budget = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// A validated multitype model.
pub struct WillowModel(MultitypeModel);

/// Extinction tail `v` and its time derivative on `[t0, horizon]`.
pub struct WillowFields {
    model: MultitypeModel,
    fields: ExtinctionFields,
}

/// A measure-valued path sampled on a time grid.
pub struct WillowPath(MeasurePath);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> WillowStatus {
    let code = match e.exit_code() {
        2 => WillowStatus::Usage,
        3 => WillowStatus::Model,
        4 => WillowStatus::Numeric,
        5 => WillowStatus::Budget,
        _ => WillowStatus::Internal,
    };
    set_error(e.to_string());
    code
}

fn usage(msg: &str) -> WillowStatus {
    set_error(msg.to_string());
    WillowStatus::Usage
}

fn guard(f: impl FnOnce() -> WillowStatus) -> WillowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            WillowStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize) -> Option<&'a [f64]> {
    if p.is_null() {
        return None;
    }
    Some(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out(dst: *mut f64, src: &[f64]) {
    if !dst.is_null() {
        std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn willow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a model from a row-major `k x k` generator and per-type `beta`, `alpha`.
///
/// # Safety
/// `q` must hold `k*k` doubles, `beta` and `alpha` `k` each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_model_new(
    k: usize,
    q: *const f64,
    beta: *const f64,
    alpha: *const f64,
    out: *mut *mut WillowModel,
) -> WillowStatus {
    guard(|| {
        if out.is_null() || k == 0 {
            return usage("willow_model_new: null output or k = 0");
        }
        let (Some(q), Some(b), Some(a)) = (slice_arg(q, k * k), slice_arg(beta, k), slice_arg(alpha, k)) else {
            return usage("willow_model_new: null input array");
        };
        let rows: Vec<&[f64]> = q.chunks(k).collect();
        match MultitypeModel::from_rows(&rows, b, a) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(WillowModel(m)));
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Resolves a built-in model name (`ref1`, `ref2type`, `critical2type`) or a
/// model file path.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_model_load(name: *const c_char, out: *mut *mut WillowModel) -> WillowStatus {
    guard(|| {
        let Some(name) = str_arg(name) else {
            return usage("willow_model_load: null or non-UTF-8 name");
        };
        if out.is_null() {
            return usage("willow_model_load: null output");
        }
        match resolve_model(name) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(WillowModel(m)));
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `m` must come from a model constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn willow_model_free(m: *mut WillowModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of types, or 0 for a null handle.
///
/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn willow_model_k(m: *const WillowModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.k())
}

/// Generalized eigenvalue `lambda0`, right/left eigenvectors and the
/// stationary law of the spine. Array outputs hold `k` doubles and may be NULL.
///
/// # Safety
/// `m` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_eigen(
    m: *const WillowModel,
    lambda0: *mut f64,
    phi0: *mut f64,
    phi0_tilde: *mut f64,
    pi: *mut f64,
) -> WillowStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return usage("willow_eigen: null model");
        };
        match generalized_eigen(&m.0) {
            Ok(s) => {
                if !lambda0.is_null() {
                    *lambda0 = s.lambda0;
                }
                write_out(phi0, &s.phi0);
                write_out(phi0_tilde, &s.phi0_tilde);
                write_out(pi, &s.pi);
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Solves for the extinction tail on `[t0, horizon]` with default tolerances.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_fields_new(m: *const WillowModel, horizon: f64, out: *mut *mut WillowFields) -> WillowStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return usage("willow_fields_new: null model");
        };
        if out.is_null() {
            return usage("willow_fields_new: null output");
        }
        match ExtinctionFields::compute(&m.0, horizon, &SolverConfig::default()) {
            Ok(fields) => {
                *out = Box::into_raw(Box::new(WillowFields { model: m.0.clone(), fields }));
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `f` must come from [`willow_fields_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn willow_fields_free(f: *mut WillowFields) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// `v_t(x)` for every type, written to `out` (`k` doubles).
///
/// # Safety
/// `f` must be a live handle; `out` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn willow_fields_v(f: *const WillowFields, t: f64, out: *mut f64) -> WillowStatus {
    field_eval(f, t, out, false)
}

/// `d/dt v_t(x)` for every type, written to `out` (`k` doubles).
///
/// # Safety
/// `f` must be a live handle; `out` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn willow_fields_dv(f: *const WillowFields, t: f64, out: *mut f64) -> WillowStatus {
    field_eval(f, t, out, true)
}

unsafe fn field_eval(f: *const WillowFields, t: f64, out: *mut f64, derivative: bool) -> WillowStatus {
    guard(|| {
        let Some(f) = f.as_ref() else {
            return usage("null fields handle");
        };
        if out.is_null() {
            return usage("null output array");
        }
        let field = if derivative { &f.fields.dv } else { &f.fields.v };
        match field.eval(t) {
            Ok(v) => {
                write_out(out, &v);
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// `P_nu(H_max <= h) = exp(-<nu, v_h>)`.
///
/// # Safety
/// `f` must be a live handle; `nu` must hold `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_extinction_cdf(f: *const WillowFields, nu: *const f64, h: f64, out: *mut f64) -> WillowStatus {
    guard(|| {
        let Some(f) = f.as_ref() else {
            return usage("willow_extinction_cdf: null fields handle");
        };
        let Some(nu) = slice_arg(nu, f.model.k()) else {
            return usage("willow_extinction_cdf: null measure");
        };
        if out.is_null() {
            return usage("willow_extinction_cdf: null output");
        }
        match FiniteMeasure::new(nu.to_vec()) {
            Ok(nu) => {
                *out = extinction_cdf(&f.fields.v, &nu, h);
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// One replicate of the branching-particle system started from `nu`
/// (`k` masses), recorded on `grid_steps + 1` uniform times in `[0, horizon]`.
/// Replicate `rep` of seed `seed` is reproducible.
///
/// # Safety
/// `m` must be a live handle; `nu` must hold `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_particles_sample(
    m: *const WillowModel,
    nu: *const f64,
    epsilon: f64,
    horizon: f64,
    grid_steps: usize,
    seed: u64,
    rep: u64,
    out: *mut *mut WillowPath,
) -> WillowStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return usage("willow_particles_sample: null model");
        };
        let Some(nu) = slice_arg(nu, m.0.k()) else {
            return usage("willow_particles_sample: null measure");
        };
        if out.is_null() {
            return usage("willow_particles_sample: null output");
        }
        let run = || -> willow::Result<MeasurePath> {
            let nu = FiniteMeasure::new(nu.to_vec())?;
            let cfg = ParticleConfig::new(epsilon, horizon, grid_steps);
            Ok(simulate_with(&m.0, &nu, &cfg, &mut stream(seed, "particles", rep, 0))?.path)
        };
        match run() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(WillowPath(p)));
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// One replicate of the process conditioned to die exactly at `h`, started
/// from a single individual of type `x` (0-based).
///
/// # Safety
/// `f` must be a live handle with horizon beyond `h`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn willow_williams_sample(
    f: *const WillowFields,
    x: usize,
    h: f64,
    epsilon: f64,
    grid_steps: usize,
    seed: u64,
    rep: u64,
    out: *mut *mut WillowPath,
) -> WillowStatus {
    guard(|| {
        let Some(f) = f.as_ref() else {
            return usage("willow_williams_sample: null fields handle");
        };
        if out.is_null() {
            return usage("willow_williams_sample: null output");
        }
        if x >= f.model.k() {
            return usage("willow_williams_sample: type index out of range");
        }
        let cfg = ImmigrationConfig::uniform(epsilon, 0.0, h, grid_steps);
        match sample_conditioned_superprocess(&f.model, &f.fields, x, h, &cfg, &mut stream(seed, "williams", rep, 0)) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(WillowPath(p)));
                WillowStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `p` must come from a sampler and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn willow_path_free(p: *mut WillowPath) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of grid times, or 0 for a null handle.
///
/// # Safety
/// `p` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn willow_path_len(p: *const WillowPath) -> usize {
    p.as_ref().map_or(0, |p| p.0.times.len())
}

/// Extinction time of the path (`INFINITY` if it survives), NaN for NULL.
///
/// # Safety
/// `p` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn willow_path_extinction_time(p: *const WillowPath) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.0.extinction_time)
}

/// Copies the grid times (`len` doubles) and the row-major masses
/// (`len * k` doubles). Either output may be NULL.
///
/// # Safety
/// `p` must be a live handle; non-null outputs must be large enough.
#[no_mangle]
pub unsafe extern "C" fn willow_path_copy(p: *const WillowPath, times: *mut f64, masses: *mut f64) -> WillowStatus {
    guard(|| {
        let Some(p) = p.as_ref() else {
            return usage("willow_path_copy: null path");
        };
        write_out(times, &p.0.times);
        if !masses.is_null() {
            let flat: Vec<f64> = p.0.masses.iter().flatten().copied().collect();
            write_out(masses, &flat);
        }
        WillowStatus::Ok
    })
}

/// Runs one named verification check. `suite` is `"fast"` or `"full"`.
/// Returns `Ok` on pass or skip, `CheckFailed` on failure; the statistic is
/// written to `statistic` when non-null.
///
/// # Safety
/// `m` must be a live handle; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn willow_verify_check(
    m: *const WillowModel,
    check: *const c_char,
    suite: *const c_char,
    seed: u64,
    statistic: *mut f64,
) -> WillowStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return usage("willow_verify_check: null model");
        };
        let (Some(check), Some(suite)) = (str_arg(check), str_arg(suite)) else {
            return usage("willow_verify_check: null or non-UTF-8 string");
        };
        let suite: Suite = match suite.parse() {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match run_check(check, &m.0, &VerifyConfig { suite, seed }) {
            Ok(r) => {
                if !statistic.is_null() {
                    *statistic = r.statistic;
                }
                if r.status == Status::Fail {
                    set_error(format!("{check} failed: {}", r.detail));
                    WillowStatus::CheckFailed
                } else {
                    WillowStatus::Ok
                }
            }
            Err(e) => fail(e),
        }
    })
}
