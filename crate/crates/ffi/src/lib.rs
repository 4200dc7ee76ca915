//! C ABI over the `flatstrip` library.
//!
//! Models and trajectories are opaque heap handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns
//! an [`FsStatus`]; on failure the message is kept per thread and can be
//! copied out with [`fs_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use flatstrip::config::ExperimentConfig;
use flatstrip::geodesics::{integrate, shadow_map, GeodesicError, PhaseState, Trajectory};
use flatstrip::geometry::{GeometryError, MetricModel, ProfileSpec};
use flatstrip::pressure::{gap_lower_bound, PressureError};
use flatstrip::riccati::{psi_u, LimitSettings, RiccatiError};

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    OutOfStrip = 3,
    Unsupported = 4,
    Numerical = 5,
    BoundViolation = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsProfileKind {
    Flat = 0,
    Power = 1,
    CappedPower = 2,
    SDependent = 3,
    ConstantCurvature = 4,
}

/// Profile parameters; fields that do not apply to `kind` are ignored.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsProfile {
    pub kind: FsProfileKind,
    pub m: u32,
    pub c: f64,
    pub x_cap: f64,
    pub c_min: f64,
    pub gamma1: f64,
    pub k: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsWarp {
    pub g: f64,
    pub g_x: f64,
    pub g_xx: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsState {
    pub tau: f64,
    pub s: f64,
    pub x: f64,
    pub phi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsShadow {
    /// Start vector of the shadowing segment.
    pub w: FsState,
    pub residual: f64,
    pub t_turn: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsGap {
    pub xi: f64,
    pub c: f64,
    pub alpha_opt: f64,
    pub gap: f64,
}

/// Opaque model handle.
pub struct FsModel(MetricModel);

/// Opaque trajectory handle.
pub struct FsTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

trait Code {
    fn code(&self) -> FsStatus;
}

impl Code for GeometryError {
    fn code(&self) -> FsStatus {
        match self {
            GeometryError::OutOfStrip { .. } => FsStatus::OutOfStrip,
            GeometryError::Unsupported(_) => FsStatus::Unsupported,
            GeometryError::InvalidModel(_) => FsStatus::InvalidInput,
            GeometryError::OrderMismatch { .. } => FsStatus::BoundViolation,
        }
    }
}

impl Code for GeodesicError {
    fn code(&self) -> FsStatus {
        match self {
            GeodesicError::Geometry(g) => g.code(),
            GeodesicError::InvalidInput(_) => FsStatus::InvalidInput,
            GeodesicError::Unsupported(_) => FsStatus::Unsupported,
            GeodesicError::StripTooWide { .. } | GeodesicError::SeparationViolated { .. } => FsStatus::BoundViolation,
            _ => FsStatus::Numerical,
        }
    }
}

impl Code for RiccatiError {
    fn code(&self) -> FsStatus {
        match self {
            RiccatiError::Geometry(g) => g.code(),
            RiccatiError::Geodesic(g) => g.code(),
            RiccatiError::InvalidInput(_) | RiccatiError::InvalidCase(_) | RiccatiError::DomainTooWide { .. } => {
                FsStatus::InvalidInput
            }
            RiccatiError::SandwichViolated { .. } => FsStatus::BoundViolation,
            _ => FsStatus::Numerical,
        }
    }
}

impl Code for PressureError {
    fn code(&self) -> FsStatus {
        match self {
            PressureError::InvalidInput(_) => FsStatus::InvalidInput,
            PressureError::Unsupported(_) => FsStatus::Unsupported,
            PressureError::Riccati(r) => r.code(),
            PressureError::Geodesic(g) => g.code(),
            PressureError::Geometry(g) => g.code(),
            PressureError::EscapeNotObserved { .. } => FsStatus::Numerical,
        }
    }
}

/// Runs `f`, records its error and converts panics.
fn guard<F: FnOnce() -> Result<(), (FsStatus, String)>>(f: F) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FsStatus::Ok
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside flatstrip".into());
            FsStatus::Panic
        }
    }
}

fn fail<E: Code + std::fmt::Display>(e: E) -> (FsStatus, String) {
    (e.code(), e.to_string())
}

fn null() -> (FsStatus, String) {
    (FsStatus::NullPointer, "null pointer argument".into())
}

fn state_in(v: &FsState) -> PhaseState {
    PhaseState {
        s: v.s,
        x: v.x,
        phi: v.phi,
        tau: v.tau,
    }
}

fn state_out(v: &PhaseState) -> FsState {
    FsState {
        tau: v.tau,
        s: v.s,
        x: v.x,
        phi: v.phi,
    }
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a model. `*out` receives a handle to free with [`fs_model_free`].
///
/// # Safety
/// `profile` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_model_new(
    profile: *const FsProfile,
    n: usize,
    half_width: f64,
    gamma0: f64,
    out: *mut *mut FsModel,
) -> FsStatus {
    guard(|| {
        let (p, out) = match (profile.as_ref(), out.as_mut()) {
            (Some(p), Some(o)) => (*p, o),
            _ => return Err(null()),
        };
        let spec = match p.kind {
            FsProfileKind::Flat => ProfileSpec::Flat,
            FsProfileKind::Power => ProfileSpec::Power { m: p.m, c: p.c },
            FsProfileKind::CappedPower => ProfileSpec::CappedPower {
                m: p.m,
                c: p.c,
                x_cap: p.x_cap,
            },
            FsProfileKind::SDependent => ProfileSpec::SDependent {
                m: p.m,
                c: p.c,
                c_min: p.c_min,
                gamma1: p.gamma1,
            },
            FsProfileKind::ConstantCurvature => ProfileSpec::ConstantCurvature { k: p.k },
        };
        let model = MetricModel::new(spec, n, half_width, gamma0).map_err(fail)?;
        *out = Box::into_raw(Box::new(FsModel(model)));
        Ok(())
    })
}

/// Builds a model from the `[profile]` and `[model]` tables of an
/// experiment config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_model_from_config(toml: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (FsStatus::InvalidInput, e.to_string()))?;
        let cfg = ExperimentConfig::parse(text).map_err(|e| (FsStatus::InvalidInput, e.to_string()))?;
        let model = cfg.validate().map_err(|e| (FsStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(FsModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_eval_metric(model: *const FsModel, s: f64, x: f64, out: *mut FsWarp) -> FsStatus {
    guard(|| {
        let (m, out) = model.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        let w = m.0.eval_metric(s, x).map_err(fail)?;
        *out = FsWarp {
            g: w.g,
            g_x: w.gx,
            g_xx: w.gxx,
        };
        Ok(())
    })
}

/// Curvature of the normal plane spanned by `∂/∂s` and `∂/∂x`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_normal_curvature(model: *const FsModel, s: f64, x: f64, out: *mut f64) -> FsStatus {
    guard(|| {
        let (m, out) = model.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        *out = m.0.normal_curvature(s, x).map_err(fail)?;
        Ok(())
    })
}

/// Integrates the geodesic flow from `start` for time `t_max`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_integrate(
    model: *const FsModel,
    start: FsState,
    t_max: f64,
    tol: f64,
    out: *mut *mut FsTrajectory,
) -> FsStatus {
    guard(|| {
        let (m, out) = model.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        let traj = integrate(&m.0, &state_in(&start), t_max, tol).map_err(fail)?;
        *out = Box::into_raw(Box::new(FsTrajectory(traj)));
        Ok(())
    })
}

/// Number of accepted samples, including the start.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_trajectory_len(traj: *const FsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.samples.len())
}

/// # Safety
/// `traj` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_trajectory_get(traj: *const FsTrajectory, i: usize, out: *mut FsState) -> FsStatus {
    guard(|| {
        let (t, out) = traj.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        let v = t
            .0
            .samples
            .get(i)
            .ok_or_else(|| (FsStatus::InvalidInput, format!("index {i} out of range")))?;
        *out = state_out(v);
        Ok(())
    })
}

/// Relative Clairaut drift; `Unsupported` for s-dependent warps.
///
/// # Safety
/// `traj` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_trajectory_clairaut_drift(traj: *const FsTrajectory, out: *mut f64) -> FsStatus {
    guard(|| {
        let (t, out) = traj.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        *out = t
            .0
            .clairaut_drift
            .ok_or_else(|| (FsStatus::Unsupported, "no Clairaut invariant for this warp".into()))?;
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_trajectory_free(traj: *mut FsTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Shadowing segment of length `t` between heights `r` starting at `s0`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_shadow(
    model: *const FsModel,
    s0: f64,
    t: f64,
    r: f64,
    tol: f64,
    out: *mut FsShadow,
) -> FsStatus {
    guard(|| {
        let (m, out) = model.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        let sh = shadow_map(&m.0, s0, t, r, tol).map_err(fail)?;
        *out = FsShadow {
            w: state_out(&sh.w),
            residual: sh.residual,
            t_turn: sh.t_turn,
        };
        Ok(())
    })
}

/// Geometric potential `ψᵘ` at `v` with default limit settings.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_psi_u(model: *const FsModel, v: FsState, out: *mut f64) -> FsStatus {
    guard(|| {
        let (m, out) = model.as_ref().zip(out.as_mut()).ok_or_else(null)?;
        *out = psi_u(&m.0, &state_in(&v), &LimitSettings::default())
            .map_err(fail)?
            .psi_u;
        Ok(())
    })
}

/// Closed-form pressure-gap lower bound.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_gap_lower_bound(
    c_key: f64,
    phi_norm: f64,
    transition_time: f64,
    escape_l: f64,
    out: *mut FsGap,
) -> FsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        let g = gap_lower_bound(c_key, phi_norm, transition_time, escape_l).map_err(fail)?;
        *out = FsGap {
            xi: g.xi,
            c: g.c,
            alpha_opt: g.alpha_opt,
            gap: g.gap,
        };
        Ok(())
    })
}
