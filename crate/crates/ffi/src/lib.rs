//! C ABI for the kinlab library.
//!
//! Every fallible function returns a [`KinlabStatus`] and writes its result
//! through an out-pointer. On failure a description is available from
//! [`kinlab_last_error_message`] on the same thread. Particle ensembles are
//! opaque handles created by [`kinlab_ensemble_new`] and released with
//! [`kinlab_ensemble_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kinlab::analysis::{contraction_rate, find_delta_star, tail_function};
use kinlab::equilibria::EquilibriumSpec;
use kinlab::simulator::{Ensemble, InitialCondition};
use kinlab::{CollisionParams, Error, ModelKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinlabModelKind {
    Velocity = 0,
    Wealth = 1,
}

/// Stationary-law families; `param` is λ for the Student law and μ for the
/// inverse-gamma law, ignored otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinlabFamily {
    Maxwellian = 0,
    GranularQuartic = 1,
    GeneralizedStudent = 2,
    InverseGammaPareto = 3,
    WealthExact = 4,
}

/// Tail-exponent search result. Missing values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinlabTailReport {
    pub s_prime_at_zero: f64,
    pub delta_star: f64,
    pub has_algebraic_tail: bool,
    pub moment_growth_rate: f64,
    pub density_exponent: f64,
}

/// Opaque particle ensemble.
pub struct KinlabEnsemble {
    inner: Ensemble,
    params: CollisionParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: KinlabStatus, msg: impl Into<String>) -> KinlabStatus {
    set_last_error(msg.into());
    status
}

fn from_error(e: Error) -> KinlabStatus {
    let status = if e.is_numerical() { KinlabStatus::Numerical } else { KinlabStatus::InvalidArgument };
    fail(status, e.to_string())
}

fn guard<F: FnOnce() -> KinlabStatus>(body: F) -> KinlabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(KinlabStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn model_kind(kind: KinlabModelKind) -> ModelKind {
    match kind {
        KinlabModelKind::Velocity => ModelKind::VelocityLine,
        KinlabModelKind::Wealth => ModelKind::WealthHalfLine,
    }
}

fn params(kind: KinlabModelKind, p: f64, q: f64) -> Result<CollisionParams, KinlabStatus> {
    CollisionParams::new(p, q, model_kind(kind)).map_err(from_error)
}

fn family(family: KinlabFamily, param: f64) -> EquilibriumSpec {
    match family {
        KinlabFamily::Maxwellian => EquilibriumSpec::Maxwellian,
        KinlabFamily::GranularQuartic => EquilibriumSpec::GranularQuartic,
        KinlabFamily::GeneralizedStudent => EquilibriumSpec::GeneralizedStudent { lambda: param },
        KinlabFamily::InverseGammaPareto => EquilibriumSpec::InverseGammaPareto { mu: param },
        KinlabFamily::WealthExact => EquilibriumSpec::WealthExact,
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn kinlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kinlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Tail function `S(δ)` (velocity) or `R(δ)` (wealth).
///
/// # Safety
/// `out` must be NULL or valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn kinlab_tail_function(
    kind: KinlabModelKind,
    p: f64,
    q: f64,
    delta: f64,
    out: *mut f64,
) -> KinlabStatus {
    guard(|| {
        if out.is_null() {
            return fail(KinlabStatus::NullPointer, "out is NULL");
        }
        let params = try_status!(params(kind, p, q));
        *out = tail_function(&params, delta);
        KinlabStatus::Ok
    })
}

/// Positive root of the tail function and the derived exponents.
///
/// # Safety
/// `out` must be NULL or valid for one `KinlabTailReport` write.
#[no_mangle]
pub unsafe extern "C" fn kinlab_find_delta_star(
    kind: KinlabModelKind,
    p: f64,
    q: f64,
    delta_max: f64,
    tol: f64,
    out: *mut KinlabTailReport,
) -> KinlabStatus {
    guard(|| {
        if out.is_null() {
            return fail(KinlabStatus::NullPointer, "out is NULL");
        }
        let params = try_status!(params(kind, p, q));
        let report = try_status!(find_delta_star(&params, delta_max, tol).map_err(from_error));
        *out = KinlabTailReport {
            s_prime_at_zero: report.s_prime_at_zero,
            delta_star: report.delta_star.unwrap_or(f64::NAN),
            has_algebraic_tail: report.has_algebraic_tail,
            moment_growth_rate: report.moment_growth_rate,
            density_exponent: report.density_exponent.unwrap_or(f64::NAN),
        };
        KinlabStatus::Ok
    })
}

/// Predicted decay rate of the Fourier distance of order `s` between two
/// scaled solutions.
///
/// # Safety
/// `out` must be NULL or valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn kinlab_contraction_rate(
    kind: KinlabModelKind,
    p: f64,
    q: f64,
    s: f64,
    out: *mut f64,
) -> KinlabStatus {
    guard(|| {
        if out.is_null() {
            return fail(KinlabStatus::NullPointer, "out is NULL");
        }
        let params = try_status!(params(kind, p, q));
        *out = try_status!(contraction_rate(&params, s).map_err(from_error));
        KinlabStatus::Ok
    })
}

/// Density of a stationary law at `v`.
///
/// # Safety
/// `out` must be NULL or valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn kinlab_equilibrium_density(
    fam: KinlabFamily,
    param: f64,
    v: f64,
    out: *mut f64,
) -> KinlabStatus {
    guard(|| {
        if out.is_null() {
            return fail(KinlabStatus::NullPointer, "out is NULL");
        }
        *out = try_status!(family(fam, param).density(v).map_err(from_error));
        KinlabStatus::Ok
    })
}

/// Creates an ensemble of `n` particles drawn from the initial law named by
/// `init` (`uniform`, `gaussian`, `exponential`, `stationary:<family>`), then
/// renormalized.
///
/// # Safety
/// `init` must be NULL or a nul-terminated string; `out` must be NULL or
/// valid for one pointer write. The handle must be freed with
/// [`kinlab_ensemble_free`].
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_new(
    kind: KinlabModelKind,
    p: f64,
    q: f64,
    init: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut KinlabEnsemble,
) -> KinlabStatus {
    guard(|| {
        if out.is_null() || init.is_null() {
            return fail(KinlabStatus::NullPointer, "init and out must not be NULL");
        }
        *out = ptr::null_mut();
        let params = try_status!(params(kind, p, q));
        let name = match CStr::from_ptr(init).to_str() {
            Ok(s) => s,
            Err(_) => return fail(KinlabStatus::InvalidArgument, "init is not UTF-8"),
        };
        let init: InitialCondition = try_status!(name.parse().map_err(from_error));
        let mut inner = try_status!(Ensemble::from_initial(params.kind(), init, n, seed).map_err(from_error));
        try_status!(inner.renormalize().map_err(from_error));
        *out = Box::into_raw(Box::new(KinlabEnsemble { inner, params }));
        KinlabStatus::Ok
    })
}

/// Releases an ensemble. NULL is ignored.
///
/// # Safety
/// `ens` must be NULL or a handle from [`kinlab_ensemble_new`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_free(ens: *mut KinlabEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// Advances the ensemble by `dt` without renormalizing.
///
/// # Safety
/// `ens` must be NULL or a live handle; `out_events` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_step(ens: *mut KinlabEnsemble, dt: f64, out_events: *mut usize) -> KinlabStatus {
    guard(|| {
        let Some(ens) = ens.as_mut() else {
            return fail(KinlabStatus::NullPointer, "ensemble is NULL");
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return fail(KinlabStatus::InvalidArgument, format!("dt must be positive, got {dt}"));
        }
        let params = ens.params;
        let events = ens.inner.step(&params, dt);
        if !out_events.is_null() {
            *out_events = events;
        }
        KinlabStatus::Ok
    })
}

/// Restores unit energy (velocity) or unit mean (wealth).
///
/// # Safety
/// `ens` must be NULL or a live handle; `out_statistic` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_renormalize(ens: *mut KinlabEnsemble, out_statistic: *mut f64) -> KinlabStatus {
    guard(|| {
        let Some(ens) = ens.as_mut() else {
            return fail(KinlabStatus::NullPointer, "ensemble is NULL");
        };
        let stat = try_status!(ens.inner.renormalize().map_err(from_error));
        if !out_statistic.is_null() {
            *out_statistic = stat;
        }
        KinlabStatus::Ok
    })
}

/// Number of particles, or 0 for NULL.
///
/// # Safety
/// `ens` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_len(ens: *const KinlabEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.inner.len())
}

/// Elapsed model time, or NaN for NULL.
///
/// # Safety
/// `ens` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_time(ens: *const KinlabEnsemble) -> f64 {
    ens.as_ref().map_or(f64::NAN, |e| e.inner.time())
}

/// Copies the states into `buf`, which must hold at least
/// [`kinlab_ensemble_len`] values.
///
/// # Safety
/// `ens` must be NULL or a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn kinlab_ensemble_copy_states(
    ens: *const KinlabEnsemble,
    buf: *mut f64,
    cap: usize,
) -> KinlabStatus {
    guard(|| {
        let Some(ens) = ens.as_ref() else {
            return fail(KinlabStatus::NullPointer, "ensemble is NULL");
        };
        if buf.is_null() {
            return fail(KinlabStatus::NullPointer, "buf is NULL");
        }
        let states = ens.inner.states();
        if cap < states.len() {
            return fail(KinlabStatus::BufferTooSmall, format!("need {} slots, got {cap}", states.len()));
        }
        ptr::copy_nonoverlapping(states.as_ptr(), buf, states.len());
        KinlabStatus::Ok
    })
}
