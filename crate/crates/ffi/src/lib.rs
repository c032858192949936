//! C interface to the loss-tunnel library.
//!
//! Every fallible function returns an [`LtStatus`]; on failure the message is
//! kept per thread and can be fetched with [`lt_last_error`]. Curves and
//! tunnels are opaque handles owned by the caller and released with their
//! `_free` functions. Output buffers are caller-allocated and their length is
//! checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use loss_tunnel::bezier::{bernstein_weights, ControlPoints, QuadratureConfig};
use loss_tunnel::error::Error;
use loss_tunnel::inference::{ess, rhat};
use loss_tunnel::linalg::Matrix;
use loss_tunnel::metrics::lppd;
use loss_tunnel::polymer::{analytic_com, analytic_re2};
use loss_tunnel::tunnel::{Param, Tunnel, TunnelConfig, VolumeMode};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    /// Null pointer, bad enum value or undersized output buffer.
    InvalidArgument = 1,
    Input = 2,
    Config = 3,
    Dimension = 4,
    NonFinite = 5,
    Degenerate = 6,
    UndefinedFrame = 7,
    Sampler = 8,
    Schema = 9,
    Data = 10,
    StaleArtifact = 11,
    Io = 12,
    /// A Rust panic was caught at the boundary.
    Internal = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtParam {
    /// Curve time in [0, 1].
    Time = 0,
    /// Arc length in [0, S].
    Arc = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtVolumeMode {
    SpeedOnly = 0,
    FullJacobian = 1,
}

/// Bezier curve in parameter space.
pub struct LtCurve {
    points: ControlPoints,
}

/// Rotation-minimizing tunnel around a curve.
pub struct LtTunnel {
    tunnel: Tunnel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LtStatus {
    match e {
        Error::Input(_) => LtStatus::Input,
        Error::Config(_) => LtStatus::Config,
        Error::Dimension { .. } => LtStatus::Dimension,
        Error::NonFinite { .. } => LtStatus::NonFinite,
        Error::Degenerate(_) => LtStatus::Degenerate,
        Error::UndefinedFrame { .. } => LtStatus::UndefinedFrame,
        Error::Sampler(_) => LtStatus::Sampler,
        Error::Schema(_) | Error::Json(_) => LtStatus::Schema,
        Error::Data { .. } | Error::Csv(_) => LtStatus::Data,
        Error::StaleArtifact { .. } => LtStatus::StaleArtifact,
        Error::Io { .. } => LtStatus::Io,
    }
}

struct Fail(LtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(LtStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LtStatus::Internal
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output buffer is null"));
    }
    if out_len < values.len() {
        return Err(invalid(&format!(
            "output buffer holds {out_len} values, {} needed",
            values.len()
        )));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn write_scalar<T>(value: T, out: *mut T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = value;
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref()
        .ok_or_else(|| invalid(&format!("{what} handle is null")))
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, Fail> {
    if ptr.is_null() {
        return Err(invalid("path is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

fn param(kind: i32, value: f64) -> Result<Param, Fail> {
    match kind {
        k if k == LtParam::Time as i32 => Ok(Param::Time(value)),
        k if k == LtParam::Arc as i32 => Ok(Param::Arc(value)),
        _ => Err(invalid(&format!("unknown parameter kind {kind}"))),
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Bernstein weights of a degree `degree` curve at `t`; writes `degree + 1`
/// values.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lt_bernstein_weights(
    degree: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> LtStatus {
    guard(|| write_out(&bernstein_weights(degree, t)?, out, out_len))
}

/// Builds a curve from `n_points` control points of dimension `dim`, stored
/// row by row.
///
/// # Safety
/// `points` must hold `n_points * dim` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_new(
    points: *const f64,
    n_points: usize,
    dim: usize,
    out: *mut *mut LtCurve,
) -> LtStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let len = n_points
            .checked_mul(dim)
            .ok_or_else(|| invalid("size overflow"))?;
        let data = slice(points, len, "points")?.to_vec();
        let points = ControlPoints::new(Matrix::from_vec(n_points, dim, data)?)?;
        *out = Box::into_raw(Box::new(LtCurve { points }));
        Ok(())
    })
}

/// # Safety
/// `curve` must be null or come from [`lt_curve_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_free(curve: *mut LtCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Degree `K` of the curve, or 0 for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_degree(curve: *const LtCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.points.degree())
}

/// Ambient dimension of the curve, or 0 for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_dim(curve: *const LtCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.points.dim())
}

/// Writes the curve point at `t`.
///
/// # Safety
/// `curve` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_evaluate(
    curve: *const LtCurve,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> LtStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        write_out(&c.points.evaluate(t)?, out, out_len)
    })
}

/// Length of the curve between `a` and `b`.
///
/// # Safety
/// `curve` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_arc_length(
    curve: *const LtCurve,
    a: f64,
    b: f64,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        let len = c.points.arc_length(a, b, &QuadratureConfig::default())?;
        write_scalar(len, out)
    })
}

/// Curve time at which the arc length from 0 equals `s`. A non-positive
/// `tol` selects the default tolerance.
///
/// # Safety
/// `curve` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_curve_arc_to_time(
    curve: *const LtCurve,
    s: f64,
    tol: f64,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        let tol = (tol > 0.0).then_some(tol);
        let t = c.points.arc_to_time(s, tol, &QuadratureConfig::default())?;
        write_scalar(t, out)
    })
}

/// Builds a tunnel around `curve` with `grid_points` frames. A zero
/// `grid_points` or non-positive `angle_threshold_deg` keeps the default.
///
/// # Safety
/// `curve` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_build(
    curve: *const LtCurve,
    grid_points: usize,
    angle_threshold_deg: f64,
    seed: u64,
    out: *mut *mut LtTunnel,
) -> LtStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let mut cfg = TunnelConfig {
            seed,
            ..TunnelConfig::default()
        };
        if grid_points > 0 {
            cfg.grid_points = grid_points;
        }
        if angle_threshold_deg > 0.0 {
            cfg.angle_threshold_deg = angle_threshold_deg;
        }
        let tunnel = Tunnel::build(&c.points, &cfg)?;
        *out = Box::into_raw(Box::new(LtTunnel { tunnel }));
        Ok(())
    })
}

/// Loads a tunnel saved with [`lt_tunnel_save`] or by the command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_load(path: *const c_char, out: *mut *mut LtTunnel) -> LtStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let tunnel = Tunnel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LtTunnel { tunnel }));
        Ok(())
    })
}

/// # Safety
/// `tunnel` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_save(tunnel: *const LtTunnel, path: *const c_char) -> LtStatus {
    guard(|| {
        let t = handle(tunnel, "tunnel")?;
        t.tunnel.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `tunnel` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_free(tunnel: *mut LtTunnel) {
    if !tunnel.is_null() {
        drop(Box::from_raw(tunnel));
    }
}

/// Dimension of lifted parameter vectors, or 0 for a null handle.
///
/// # Safety
/// `tunnel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_ambient_dim(tunnel: *const LtTunnel) -> usize {
    tunnel.as_ref().map_or(0, |t| t.tunnel.ambient_dim())
}

/// Number of normal coordinates `xi`, or 0 for a null handle.
///
/// # Safety
/// `tunnel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_n_normals(tunnel: *const LtTunnel) -> usize {
    tunnel.as_ref().map_or(0, |t| t.tunnel.n_normals())
}

/// Total arc length of the tunnel's centre curve, or NaN for a null handle.
///
/// # Safety
/// `tunnel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_length(tunnel: *const LtTunnel) -> f64 {
    tunnel.as_ref().map_or(f64::NAN, |t| t.tunnel.length())
}

/// Maps tunnel coordinates to a parameter vector. `kind` is an
/// [`LtParam`] value saying whether `value` is a time or an arc length.
///
/// # Safety
/// `tunnel` must be a live handle, `xi` must hold `xi_len` doubles and `out`
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_lift(
    tunnel: *const LtTunnel,
    kind: i32,
    value: f64,
    xi: *const f64,
    xi_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LtStatus {
    guard(|| {
        let t = handle(tunnel, "tunnel")?;
        let xi = slice(xi, xi_len, "xi")?;
        write_out(&t.tunnel.lift(param(kind, value)?, xi)?, out, out_len)
    })
}

/// Log volume adjustment of the tunnel map; `kind` as in [`lt_tunnel_lift`]
/// and `mode` an [`LtVolumeMode`] value.
///
/// # Safety
/// `tunnel` must be a live handle, `xi` must hold `xi_len` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_tunnel_log_volume_adjustment(
    tunnel: *const LtTunnel,
    kind: i32,
    value: f64,
    xi: *const f64,
    xi_len: usize,
    mode: i32,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let t = handle(tunnel, "tunnel")?;
        let xi = slice(xi, xi_len, "xi")?;
        let mode = match mode {
            m if m == LtVolumeMode::SpeedOnly as i32 => VolumeMode::SpeedOnly,
            m if m == LtVolumeMode::FullJacobian as i32 => VolumeMode::FullJacobian,
            _ => return Err(invalid(&format!("unknown volume mode {mode}"))),
        };
        let v = t
            .tunnel
            .log_volume_adjustment(param(kind, value)?, xi, mode)?;
        write_scalar(v, out)
    })
}

unsafe fn chains<'a>(
    draws: *const f64,
    n_chains: usize,
    n_draws: usize,
) -> Result<Vec<&'a [f64]>, Fail> {
    let len = n_chains
        .checked_mul(n_draws)
        .ok_or_else(|| invalid("size overflow"))?;
    let all = slice(draws, len, "draws")?;
    Ok(if n_draws == 0 {
        vec![all; n_chains]
    } else {
        all.chunks(n_draws).collect()
    })
}

/// Effective sample size of one scalar over `n_chains` chains of `n_draws`
/// draws each, stored chain by chain. `flagged` (may be null) is set to 1
/// when the estimate is unreliable.
///
/// # Safety
/// `draws` must hold `n_chains * n_draws` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_ess(
    draws: *const f64,
    n_chains: usize,
    n_draws: usize,
    out: *mut f64,
    flagged: *mut i32,
) -> LtStatus {
    guard(|| {
        let d = ess(&chains(draws, n_chains, n_draws)?)?;
        if !flagged.is_null() {
            *flagged = i32::from(d.flagged);
        }
        write_scalar(d.value, out)
    })
}

/// Potential scale reduction factor, with the same layout as [`lt_ess`].
///
/// # Safety
/// `draws` must hold `n_chains * n_draws` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_rhat(
    draws: *const f64,
    n_chains: usize,
    n_draws: usize,
    out: *mut f64,
    flagged: *mut i32,
) -> LtStatus {
    guard(|| {
        let d = rhat(&chains(draws, n_chains, n_draws)?)?;
        if !flagged.is_null() {
            *flagged = i32::from(d.flagged);
        }
        write_scalar(d.value, out)
    })
}

/// Mean log pointwise predictive density from a row-major
/// `n_obs x n_draws` matrix of log densities.
///
/// # Safety
/// `log_densities` must hold `n_obs * n_draws` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lt_lppd(
    log_densities: *const f64,
    n_obs: usize,
    n_draws: usize,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let len = n_obs
            .checked_mul(n_draws)
            .ok_or_else(|| invalid("size overflow"))?;
        let m = Matrix::from_vec(
            n_obs,
            n_draws,
            slice(log_densities, len, "log densities")?.to_vec(),
        )?;
        write_scalar(lppd(&m)?, out)
    })
}

/// Expected centre-of-mass distance of the polymer model after `n` steps.
#[no_mangle]
pub extern "C" fn lt_polymer_com(n: f64, eta: f64, sigma: f64, d: f64, k: usize) -> f64 {
    analytic_com(n, eta, sigma, d, k)
}

/// Expected squared end-to-end distance of the polymer model after `n`
/// steps.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_polymer_re2(
    n: f64,
    eta: f64,
    sigma: f64,
    d: f64,
    k: usize,
    out: *mut f64,
) -> LtStatus {
    guard(|| write_scalar(analytic_re2(n, eta, sigma, d, k)?, out))
}
