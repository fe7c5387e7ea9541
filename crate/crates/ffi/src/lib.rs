//! C ABI over syscat. Objects cross the boundary as opaque handles that the
//! caller frees; every call returns a status code and stores a message for
//! `syscat_last_error_message` on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use syscat::cli::run_checks;
use syscat::constants::residue_c;
use syscat::model::ModelGeometry;
use syscat::scalar::Scalar;
use syscat::scattering::{q_curvature, residue_extract, s_derivative, Mode, Scatterer};
use syscat::verify::{Pipeline, VerifyConfig};
use syscat::yamabe::{sy_global_solve, SYSolution};
use syscat::Error;

/// Status codes returned by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyscatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Pole = 3,
    NoConvergence = 4,
    Numerical = 5,
    Unsupported = 6,
    CheckFailed = 7,
    Panic = 8,
}

/// Opaque geometry handle.
pub struct SyscatGeometry {
    g: ModelGeometry,
}

/// Opaque handle for a solved geometry.
pub struct SyscatSolution {
    g: ModelGeometry,
    sol: SYSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SyscatStatus {
    match e {
        Error::Invalid(_) | Error::ModeMismatch(_) | Error::Io(_) | Error::Precondition(_) => {
            SyscatStatus::InvalidInput
        }
        Error::Pole { .. } => SyscatStatus::Pole,
        Error::NoConvergence(_) | Error::LeftAdmissibleCone(_) => SyscatStatus::NoConvergence,
        Error::Unsupported(_) => SyscatStatus::Unsupported,
        _ => SyscatStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SyscatStatus, String)>) -> SyscatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SyscatStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("panic inside syscat");
            SyscatStatus::Panic
        }
    }
}

fn lift<T>(r: syscat::Result<T>) -> Result<T, (SyscatStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SyscatStatus, String)> {
    if p.is_null() {
        return Err((SyscatStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SyscatStatus::InvalidInput, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> (SyscatStatus, String) {
    (SyscatStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn syscat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn syscat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parse a geometry spec (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_geometry_from_json(
    json: *const c_char,
    out: *mut *mut SyscatGeometry,
) -> SyscatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = str_arg(json, "json")?;
        let g = lift(ModelGeometry::from_json(s))?;
        *out = Box::into_raw(Box::new(SyscatGeometry { g }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from `syscat_geometry_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn syscat_geometry_free(g: *mut SyscatGeometry) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Boundary dimension n.
///
/// # Safety
/// `g` must be a live geometry handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_geometry_dimension(
    g: *const SyscatGeometry,
    out: *mut u32,
) -> SyscatStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("geometry"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = g.g.n() as u32;
        Ok(())
    })
}

/// Solve the singular Yamabe problem on a geometry.
///
/// # Safety
/// `g` must be a live geometry handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_solve(
    g: *const SyscatGeometry,
    tol: f64,
    out: *mut *mut SyscatSolution,
) -> SyscatStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("geometry"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(tol > 0.0) {
            return Err((SyscatStatus::InvalidInput, "tol must be positive".into()));
        }
        let sol = lift(sy_global_solve(&g.g, tol))?;
        *out = Box::into_raw(Box::new(SyscatSolution {
            g: g.g.clone(),
            sol,
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `syscat_solve` or be null.
#[no_mangle]
pub unsafe extern "C" fn syscat_solution_free(s: *mut SyscatSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Global constant c of ũ (coefficient of r^{n+1}).
///
/// # Safety
/// `s` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_solution_global_constant(
    s: *const SyscatSolution,
    out: *mut f64,
) -> SyscatStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = s.sol.c.unwrap_or(0.0);
        Ok(())
    })
}

/// Mode eigenvalue of S(s). `mode` is e.g. "1,0" or "l=2"; null means the
/// trivial mode.
///
/// # Safety
/// `s` must be a live solution handle; `mode` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_scattering(
    s: *const SyscatSolution,
    sval: f64,
    mode: *const c_char,
    out: *mut f64,
) -> SyscatStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = if mode.is_null() {
            Mode::trivial(&s.g)
        } else {
            lift(Mode::parse(str_arg(mode, "mode")?, &s.g))?
        };
        let sc = lift(Scatterer::new(&s.g, &s.sol))?;
        *out = lift(sc.s_value(sval, &m))?;
        Ok(())
    })
}

/// Q = c_n^{-1} S(n)1.
///
/// # Safety
/// `s` must be a live solution handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_q_curvature(
    s: *const SyscatSolution,
    out: *mut f64,
) -> SyscatStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let sc = lift(Scatterer::new(&s.g, &s.sol))?;
        *out = lift(q_curvature(&sc))?.q;
        Ok(())
    })
}

/// 𝒮 = d/ds S(s)1 at s = n.
///
/// # Safety
/// `s` must be a live solution handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_s_derivative(
    s: *const SyscatSolution,
    out: *mut f64,
) -> SyscatStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let sc = lift(Scatterer::new(&s.g, &s.sol))?;
        *out = lift(s_derivative(&sc))?.value;
        Ok(())
    })
}

/// P_q eigenvalue of a mode from the residue of S at (n+q)/2.
///
/// # Safety
/// `s` must be a live solution handle; `mode` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_gjms_eigenvalue(
    s: *const SyscatSolution,
    q: u32,
    mode: *const c_char,
    out: *mut f64,
) -> SyscatStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = if mode.is_null() {
            Mode::trivial(&s.g)
        } else {
            lift(Mode::parse(str_arg(mode, "mode")?, &s.g))?
        };
        let sc = lift(Scatterer::new(&s.g, &s.sol))?;
        let r = lift(residue_extract(&sc, q, &m))?;
        *out = r.eigenvalue.ok_or_else(|| {
            (
                SyscatStatus::Unsupported,
                format!("c_{q} vanishes; no eigenvalue"),
            )
        })?;
        Ok(())
    })
}

/// c_q as a double, plus numerator and denominator when they fit in i64.
///
/// # Safety
/// `out` writable; `num` and `den` may be null.
#[no_mangle]
pub unsafe extern "C" fn syscat_residue_constant(
    q: u32,
    n: u32,
    out: *mut f64,
    num: *mut i64,
    den: *mut i64,
) -> SyscatStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if q == 0 || n == 0 {
            return Err((
                SyscatStatus::InvalidInput,
                "q and n must be positive".into(),
            ));
        }
        let c = residue_c(q, n);
        *out = Scalar::to_f64(&c);
        let (a, b) = (c.numer().to_string(), c.denom().to_string());
        if let Some(p) = num.as_mut() {
            *p = a.parse().unwrap_or(0);
        }
        if let Some(p) = den.as_mut() {
            *p = b.parse().unwrap_or(0);
        }
        Ok(())
    })
}

/// Run identity checks ("B,C,E", …) and return the JSON report array in a
/// string freed with `syscat_string_free`. Returns CHECK_FAILED, with the
/// reports still written, when a check fails.
///
/// # Safety
/// `g` must be a live geometry handle; `checks` NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn syscat_verify_json(
    g: *const SyscatGeometry,
    checks: *const c_char,
    tol: f64,
    budget_scale: f64,
    out: *mut *mut c_char,
) -> SyscatStatus {
    let mut failed = false;
    let st = guard(|| {
        let g = g.as_ref().ok_or_else(|| null("geometry"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let list: Vec<String> = str_arg(checks, "checks")?
            .split(',')
            .map(|c| c.trim().to_uppercase())
            .filter(|c| !c.is_empty())
            .collect();
        let cfg = VerifyConfig {
            bvp_tol: tol,
            budget_scale,
            ..VerifyConfig::default()
        };
        let p = lift(Pipeline::new(g.g.clone(), tol))?;
        let reports = run_checks(&p, &list, &cfg, None)
            .map_err(|e| (SyscatStatus::InvalidInput, e.to_string()))?;
        failed = reports.iter().any(|r| !r.passed());
        let s = serde_json::to_string(&reports)
            .map_err(|e| (SyscatStatus::Numerical, e.to_string()))?;
        *out = CString::new(s).unwrap_or_default().into_raw();
        Ok(())
    });
    if st == SyscatStatus::Ok && failed {
        set_error("one or more checks failed");
        return SyscatStatus::CheckFailed;
    }
    st
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn syscat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
