//! C ABI for the fr-minmax library.
//!
//! Conventions:
//!
//! - every object is an opaque handle created by an `fr_*_new`-style
//!   constructor and released by the matching `fr_*_free`;
//! - every fallible call returns an [`FrStatus`] code and writes its result
//!   through out-pointers; `FR_STATUS_OK` is 0;
//! - on failure, [`fr_last_error_message`] returns a thread-local,
//!   NUL-terminated description of the most recent error;
//! - all pointers must be valid for the duration of the call; handles are
//!   not thread-safe to mutate concurrently but are safe to share for the
//!   read-only query functions.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::sync::Arc;

use libc::{c_char, c_double, size_t};

use fr_minmax::equilibrium::{self, EquilibriumResult};
use fr_minmax::flow::{self, IntegratorConfig, Scheme, Trajectory};
use fr_minmax::mda;
use fr_minmax::grid::Grid;
use fr_minmax::measure::{GridMeasure, ReferenceMeasure};
use fr_minmax::payoff::{self, RegularizedObjective};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    GridMismatch = 3,
    NonFinite = 4,
    RatioCondition = 5,
    NotConverged = 6,
    Io = 7,
    Utf8 = 8,
    Internal = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap_or_default());
}

fn status_of(err: &fr_minmax::Error) -> FrStatus {
    use fr_minmax::Error::*;
    match err {
        GridMismatch(_) => FrStatus::GridMismatch,
        NonFinite { .. } => FrStatus::NonFinite,
        InvalidParameter { .. } => FrStatus::InvalidArgument,
        RatioCondition { .. } => FrStatus::RatioCondition,
        NotConverged { .. } => FrStatus::NotConverged,
        Config(_) => FrStatus::InvalidArgument,
        Io { .. } => FrStatus::Io,
    }
}

fn fail(err: fr_minmax::Error) -> FrStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque quadrature grid handle.
pub struct FrGrid {
    inner: Arc<Grid>,
}

/// Opaque probability-measure handle.
pub struct FrMeasure {
    inner: GridMeasure,
}

/// Opaque regularized-objective handle (payoff + sigma + references).
pub struct FrObjective {
    inner: RegularizedObjective,
}

/// Opaque trajectory handle.
pub struct FrTrajectory {
    inner: Trajectory,
}

/// Opaque equilibrium handle.
pub struct FrEquilibrium {
    inner: EquilibriumResult,
    objective: RegularizedObjective,
}

/// Per-sample trajectory diagnostics (mirrors the trajectory CSV columns).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FrSampleDiag {
    pub t: c_double,
    pub kl_nu_pi: c_double,
    pub kl_mu_rho: c_double,
    pub sup_ratio_nu: c_double,
    pub inf_ratio_nu: c_double,
    pub sup_ratio_mu: c_double,
    pub inf_ratio_mu: c_double,
    pub mass_err_nu: c_double,
    pub mass_err_mu: c_double,
}

/// Derived constants of an equilibrium solve.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FrConstants {
    pub c_nu: c_double,
    pub c_mu: c_double,
    pub c_sigma: c_double,
    pub r1_nu: c_double,
    pub r1_mu: c_double,
    pub big_r1_nu: c_double,
    pub big_r1_mu: c_double,
    pub cv_nu: c_double,
    pub cv_mu: c_double,
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!("null pointer: ", stringify!($ptr)));
                return FrStatus::NullPointer;
            }
        }
    };
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> FrStatus {
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    FrStatus::Ok
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Uniform 1-D grid of `n >= 2` points on `[a, b]` with trapezoidal weights.
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released with
/// [`fr_grid_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_grid_uniform_1d(n: size_t, a: c_double, b: c_double, out: *mut *mut FrGrid) -> FrStatus {
    match Grid::uniform_1d(n, a, b) {
        Ok(g) => unsafe { write_out(out, FrGrid { inner: Arc::new(g) }) },
        Err(e) => fail(e),
    }
}

/// Finite strategy set of `n` points with unit weights.
///
/// # Safety
/// As [`fr_grid_uniform_1d`].
#[no_mangle]
pub unsafe extern "C" fn fr_grid_finite(n: size_t, out: *mut *mut FrGrid) -> FrStatus {
    match Grid::finite(n) {
        Ok(g) => unsafe { write_out(out, FrGrid { inner: Arc::new(g) }) },
        Err(e) => fail(e),
    }
}

/// Number of grid points; 0 for a null handle.
///
/// # Safety
/// `grid` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn fr_grid_len(grid: *const FrGrid) -> size_t {
    unsafe { grid.as_ref() }.map(|g| g.inner.len()).unwrap_or(0)
}

/// # Safety
/// `grid` must be a handle returned by this library, not yet freed; null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn fr_grid_free(grid: *mut FrGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Uniform probability measure on the grid.
///
/// # Safety
/// `grid` must be a live handle; `out` valid; release with
/// [`fr_measure_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_measure_uniform(grid: *const FrGrid, out: *mut *mut FrMeasure) -> FrStatus {
    let grid = nonnull!(grid);
    unsafe { write_out(out, FrMeasure { inner: GridMeasure::uniform(grid.inner.clone()) }) }
}

/// Gibbs normalization of `len` unnormalized log-weights; writes the log
/// normalizing constant to `log_z_out` when non-null.
///
/// # Safety
/// `log_weights` must point to `len` readable doubles; `grid` live; `out`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn fr_measure_from_log_weights(
    grid: *const FrGrid,
    log_weights: *const c_double,
    len: size_t,
    log_z_out: *mut c_double,
    out: *mut *mut FrMeasure,
) -> FrStatus {
    let grid = nonnull!(grid);
    if log_weights.is_null() {
        set_error("null log_weights");
        return FrStatus::NullPointer;
    }
    let slice = unsafe { std::slice::from_raw_parts(log_weights, len) };
    match GridMeasure::from_log_weights(grid.inner.clone(), slice) {
        Ok((m, log_z)) => {
            if !log_z_out.is_null() {
                unsafe { *log_z_out = log_z };
            }
            unsafe { write_out(out, FrMeasure { inner: m }) }
        }
        Err(e) => fail(e),
    }
}

/// Copy the log-density values into `buf` (capacity `len`, must equal the
/// grid size).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fr_measure_log_density(m: *const FrMeasure, buf: *mut c_double, len: size_t) -> FrStatus {
    let m = nonnull!(m);
    if buf.is_null() {
        set_error("null buffer");
        return FrStatus::NullPointer;
    }
    if len != m.inner.len() {
        set_error("buffer length differs from grid size");
        return FrStatus::InvalidArgument;
    }
    unsafe { std::ptr::copy_nonoverlapping(m.inner.log_density().as_ptr(), buf, len) };
    FrStatus::Ok
}

/// Relative entropy KL(p|q).
///
/// # Safety
/// `p`, `q` live handles on the same grid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fr_measure_kl(p: *const FrMeasure, q: *const FrMeasure, out: *mut c_double) -> FrStatus {
    let p = nonnull!(p);
    let q = nonnull!(q);
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    match p.inner.kl_divergence(&q.inner) {
        Ok(v) => {
            unsafe { *out = v };
            FrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Total variation distance.
///
/// # Safety
/// As [`fr_measure_kl`].
#[no_mangle]
pub unsafe extern "C" fn fr_measure_tv(p: *const FrMeasure, q: *const FrMeasure, out: *mut c_double) -> FrStatus {
    let p = nonnull!(p);
    let q = nonnull!(q);
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    match p.inner.tv_distance(&q.inner) {
        Ok(v) => {
            unsafe { *out = v };
            FrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `m` must be a handle returned by this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn fr_measure_free(m: *mut FrMeasure) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Build a regularized objective from a named kernel generator (`zero`,
/// `matching_pennies`, `smooth_sin`, `appendix_d_phi`) with uniform
/// references. `matching_pennies` ignores the supplied grids and uses its
/// own 2x2 finite sets.
///
/// # Safety
/// `generator` must be a NUL-terminated string; grid handles live; `out`
/// valid; release with [`fr_objective_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_objective_new_generator(
    generator: *const c_char,
    grid_x: *const FrGrid,
    grid_y: *const FrGrid,
    sigma: c_double,
    out: *mut *mut FrObjective,
) -> FrStatus {
    let gx = nonnull!(grid_x);
    let gy = nonnull!(grid_y);
    if generator.is_null() {
        set_error("null generator name");
        return FrStatus::NullPointer;
    }
    let name = match unsafe { CStr::from_ptr(generator) }.to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("generator name is not valid UTF-8");
            return FrStatus::Utf8;
        }
    };
    let spec = match payoff::generator_by_name(name, gx.inner.clone(), gy.inner.clone()) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let pi = ReferenceMeasure::uniform(spec.grid_x().clone());
    let rho = ReferenceMeasure::uniform(spec.grid_y().clone());
    match RegularizedObjective::new(spec, sigma, pi, rho) {
        Ok(obj) => unsafe { write_out(out, FrObjective { inner: obj }) },
        Err(e) => fail(e),
    }
}

/// # Safety
/// `obj` must be a handle returned by this library, not yet freed; null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn fr_objective_free(obj: *mut FrObjective) {
    if !obj.is_null() {
        drop(unsafe { Box::from_raw(obj) });
    }
}

// ---------------------------------------------------------------------------
// Flow integration
// ---------------------------------------------------------------------------

/// Integration scheme selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrScheme {
    EulerLog = 0,
    ExpDuhamel = 1,
}

/// Integrate the birth-death flow from `(nu0, mu0)` over `[0, t_end]`.
///
/// # Safety
/// All handles live; `out` valid; release with [`fr_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_flow_integrate(
    obj: *const FrObjective,
    nu0: *const FrMeasure,
    mu0: *const FrMeasure,
    scheme: FrScheme,
    dt: c_double,
    t_end: c_double,
    sample_every: size_t,
    out: *mut *mut FrTrajectory,
) -> FrStatus {
    let obj = nonnull!(obj);
    let nu0 = nonnull!(nu0);
    let mu0 = nonnull!(mu0);
    let scheme = match scheme {
        FrScheme::EulerLog => Scheme::EulerLog,
        FrScheme::ExpDuhamel => Scheme::ExpDuhamel,
    };
    let cfg = match IntegratorConfig::new(scheme, dt, t_end, sample_every) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match flow::integrate(&nu0.inner, &mu0.inner, &obj.inner, &cfg) {
        Ok(t) => unsafe { write_out(out, FrTrajectory { inner: t }) },
        Err(e) => fail(e),
    }
}

/// Number of samples in a trajectory; 0 for null.
///
/// # Safety
/// `t` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fr_trajectory_len(t: *const FrTrajectory) -> size_t {
    unsafe { t.as_ref() }.map(|t| t.inner.samples.len()).unwrap_or(0)
}

/// Diagnostics of sample `idx`.
///
/// # Safety
/// `t` live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fr_trajectory_diag(t: *const FrTrajectory, idx: size_t, out: *mut FrSampleDiag) -> FrStatus {
    let t = nonnull!(t);
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    let Some(d) = t.inner.diagnostics.get(idx) else {
        set_error("sample index out of range");
        return FrStatus::InvalidArgument;
    };
    unsafe {
        *out = FrSampleDiag {
            t: d.t,
            kl_nu_pi: d.kl_nu_pi,
            kl_mu_rho: d.kl_mu_rho,
            sup_ratio_nu: d.sup_ratio_nu,
            inf_ratio_nu: d.inf_ratio_nu,
            sup_ratio_mu: d.sup_ratio_mu,
            inf_ratio_mu: d.inf_ratio_mu,
            mass_err_nu: d.mass_err_nu,
            mass_err_mu: d.mass_err_mu,
        };
    }
    FrStatus::Ok
}

/// Clone the pair of measures at sample `idx`.
///
/// # Safety
/// `t` live; out-pointers valid; release the measures with
/// [`fr_measure_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_trajectory_state(
    t: *const FrTrajectory,
    idx: size_t,
    nu_out: *mut *mut FrMeasure,
    mu_out: *mut *mut FrMeasure,
) -> FrStatus {
    let t = nonnull!(t);
    let Some(s) = t.inner.samples.get(idx) else {
        set_error("sample index out of range");
        return FrStatus::InvalidArgument;
    };
    let status = unsafe { write_out(nu_out, FrMeasure { inner: s.nu.clone() }) };
    if status != FrStatus::Ok {
        return status;
    }
    unsafe { write_out(mu_out, FrMeasure { inner: s.mu.clone() }) }
}

/// # Safety
/// `t` must be a handle returned by this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn fr_trajectory_free(t: *mut FrTrajectory) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

// ---------------------------------------------------------------------------
// Mirror descent-ascent
// ---------------------------------------------------------------------------

/// Regularizer-weight convention for MDA runs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrRegConvention {
    /// Weight `sigma^2 / 2` (continuous-time objective).
    MainText = 0,
    /// Weight `sigma` (discrete-time analysis), requires `sigma * eta <= 1`.
    AppendixD = 1,
}

/// Run simultaneous mirror descent-ascent for `n_steps` iterations and
/// return the final pair. `sigma` is interpreted through `convention`; the
/// objective's own `sigma` is not consulted.
///
/// # Safety
/// All handles live; out-pointers valid; release the measures with
/// [`fr_measure_free`].
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn fr_mda_run(
    obj: *const FrObjective,
    nu0: *const FrMeasure,
    mu0: *const FrMeasure,
    convention: FrRegConvention,
    sigma: c_double,
    eta: c_double,
    n_steps: size_t,
    nu_out: *mut *mut FrMeasure,
    mu_out: *mut *mut FrMeasure,
) -> FrStatus {
    let obj = nonnull!(obj);
    let nu0 = nonnull!(nu0);
    let mu0 = nonnull!(mu0);
    let cfg = match convention {
        FrRegConvention::MainText => mda::MdaConfig::main_text(sigma, eta, n_steps, n_steps),
        FrRegConvention::AppendixD => mda::MdaConfig::appendix_d(sigma, eta, n_steps, n_steps),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut nu = nu0.inner.clone();
    let mut mu = mu0.inner.clone();
    for _ in 0..n_steps {
        match mda::mda_step(&nu, &mu, &obj.inner, &cfg) {
            Ok((n2, m2)) => {
                nu = n2;
                mu = m2;
            }
            Err(e) => return fail(e),
        }
    }
    let status = unsafe { write_out(nu_out, FrMeasure { inner: nu }) };
    if status != FrStatus::Ok {
        return status;
    }
    unsafe { write_out(mu_out, FrMeasure { inner: mu }) }
}

// ---------------------------------------------------------------------------
// Equilibrium
// ---------------------------------------------------------------------------

/// Solve for the mixed Nash equilibrium by damped Gibbs fixed-point
/// iteration. Pass `damping <= 0` to use the default damping.
///
/// # Safety
/// `obj` live; `out` valid; release with [`fr_equilibrium_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_solve_mne(
    obj: *const FrObjective,
    damping: c_double,
    tol: c_double,
    max_iter: size_t,
    out: *mut *mut FrEquilibrium,
) -> FrStatus {
    let obj = nonnull!(obj);
    let damping = if damping > 0.0 { Some(damping) } else { None };
    match equilibrium::solve_mne(&obj.inner, damping, tol, max_iter) {
        Ok(eq) => {
            if !eq.converged {
                set_error(&format!(
                    "fixed-point iteration stopped at residual {:.3e} after {} iterations",
                    eq.residual_tv, eq.iterations
                ));
                return FrStatus::NotConverged;
            }
            unsafe { write_out(out, FrEquilibrium { inner: eq, objective: obj.inner.clone() }) }
        }
        Err(e) => fail(e),
    }
}

/// Terminal best-response TV residual; NaN for null.
///
/// # Safety
/// `eq` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fr_equilibrium_residual(eq: *const FrEquilibrium) -> c_double {
    unsafe { eq.as_ref() }.map(|e| e.inner.residual_tv).unwrap_or(f64::NAN)
}

/// Clone the equilibrium pair.
///
/// # Safety
/// `eq` live; out-pointers valid; release with [`fr_measure_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_equilibrium_pair(
    eq: *const FrEquilibrium,
    nu_out: *mut *mut FrMeasure,
    mu_out: *mut *mut FrMeasure,
) -> FrStatus {
    let eq = nonnull!(eq);
    let status = unsafe { write_out(nu_out, FrMeasure { inner: eq.inner.nu_star.clone() }) };
    if status != FrStatus::Ok {
        return status;
    }
    unsafe { write_out(mu_out, FrMeasure { inner: eq.inner.mu_star.clone() }) }
}

/// Derived constants bundle of the solve.
///
/// # Safety
/// `eq` live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fr_equilibrium_constants(eq: *const FrEquilibrium, out: *mut FrConstants) -> FrStatus {
    let eq = nonnull!(eq);
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    let c = &eq.inner.constants;
    unsafe {
        *out = FrConstants {
            c_nu: c.c_nu,
            c_mu: c.c_mu,
            c_sigma: c.c_sigma,
            r1_nu: c.r1_nu,
            r1_mu: c.r1_mu,
            big_r1_nu: c.big_r1_nu,
            big_r1_mu: c.big_r1_mu,
            cv_nu: c.cv_nu,
            cv_mu: c.cv_mu,
        };
    }
    FrStatus::Ok
}

/// Nikaido-Isoda error of `(nu, mu)` for the equilibrium's objective.
///
/// # Safety
/// All handles live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fr_ni_error(
    eq: *const FrEquilibrium,
    nu: *const FrMeasure,
    mu: *const FrMeasure,
    out: *mut c_double,
) -> FrStatus {
    let eq = nonnull!(eq);
    let nu = nonnull!(nu);
    let mu = nonnull!(mu);
    if out.is_null() {
        set_error("null out-pointer");
        return FrStatus::NullPointer;
    }
    match equilibrium::ni_error(&nu.inner, &mu.inner, &eq.objective) {
        Ok(v) => {
            unsafe { *out = v };
            FrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `eq` must be a handle returned by this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn fr_equilibrium_free(eq: *mut FrEquilibrium) {
    if !eq.is_null() {
        drop(unsafe { Box::from_raw(eq) });
    }
}
