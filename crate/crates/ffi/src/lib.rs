//! C ABI over `conjlab`.
//!
//! A `ConjlabSystem` is created from a catalog id plus named parameters and
//! released with `conjlab_system_free`. Every fallible call returns a
//! `ConjlabStatus`; on failure `conjlab_last_error` describes the cause
//! for the calling thread. Matrices are written column-major.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use conjlab::catalog::{get_entry, CatalogEntry};
use conjlab::conjugacy::{ConjugacyOptions, Conjugator};
use conjlab::dichotomy::{verify_all, VerifyGrids, VerifyOptions};
use conjlab::smoothness;
use conjlab::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownEntry = 3,
    Config = 4,
    NotContracting = 5,
    Numerical = 6,
    Singular = 7,
    Capability = 8,
    Panic = 9,
}

impl From<&Error> for ConjlabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::UnknownEntry(_) => Self::UnknownEntry,
            Error::Config(_) => Self::Config,
            Error::NotContracting { .. } => Self::NotContracting,
            Error::Singular { .. } => Self::Singular,
            Error::Capability(_) => Self::Capability,
            Error::Domain(_) => Self::InvalidArgument,
            _ => Self::Numerical,
        }
    }
}

/// Hypothesis check results; boolean fields are 0 or 1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConjlabVerifySummary {
    pub p_hat: f64,
    pub q_hat: f64,
    pub c1_margin: f64,
    pub c1_passed: i32,
    pub c2_passed: i32,
    pub c3_passed: i32,
    pub c5_passed: i32,
}

/// Opaque handle.
pub struct ConjlabSystem {
    entry: CatalogEntry,
    conjugator: OnceLock<Result<Conjugator, Error>>,
}

impl ConjlabSystem {
    fn conjugator(&self) -> Result<&Conjugator, Error> {
        self.conjugator
            .get_or_init(|| self.entry.conjugator(ConjugacyOptions::default()))
            .as_ref()
            .map_err(Clone::clone)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording errors and converting panics.
fn guard<F>(f: F) -> ConjlabStatus
where
    F: FnOnce() -> Result<(), (ConjlabStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ConjlabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ConjlabStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ConjlabStatus, String) {
    (ConjlabStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (ConjlabStatus, String) {
    (ConjlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(sys: *const ConjlabSystem) -> Result<&'a ConjlabSystem, (ConjlabStatus, String)> {
    sys.as_ref().ok_or_else(|| null("system"))
}

unsafe fn read_point(
    sys: &ConjlabSystem,
    data: *const f64,
    len: usize,
) -> Result<DVector<f64>, (ConjlabStatus, String)> {
    let d = sys.entry.dimension();
    if data.is_null() {
        return Err(null("point"));
    }
    if len != d {
        return Err((
            ConjlabStatus::InvalidArgument,
            format!("point has length {len}, system dimension is {d}"),
        ));
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(data, len)))
}

unsafe fn write_slice(out: *mut f64, values: &[f64]) -> Result<(), (ConjlabStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn conjlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a system from a catalog id (`"S1"`..`"S4"` or the full name)
/// and `n_params` name/value pairs. Names may be null when `n_params` is 0.
///
/// # Safety
/// `id` must be a NUL-terminated string; `names` and `values` must hold
/// `n_params` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlab_system_new(
    id: *const c_char,
    names: *const *const c_char,
    values: *const f64,
    n_params: usize,
    out: *mut *mut ConjlabSystem,
) -> ConjlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if id.is_null() {
            return Err(null("id"));
        }
        let id = CStr::from_ptr(id)
            .to_str()
            .map_err(|_| (ConjlabStatus::InvalidArgument, "id is not UTF-8".to_string()))?;
        let mut params = BTreeMap::new();
        if n_params > 0 {
            if names.is_null() || values.is_null() {
                return Err(null("parameter arrays"));
            }
            for i in 0..n_params {
                let name = *names.add(i);
                if name.is_null() {
                    return Err(null("parameter name"));
                }
                let name = CStr::from_ptr(name).to_str().map_err(|_| {
                    (ConjlabStatus::InvalidArgument, "parameter name is not UTF-8".to_string())
                })?;
                params.insert(name.to_string(), *values.add(i));
            }
        }
        let entry = get_entry(id, &params).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ConjlabSystem {
            entry,
            conjugator: OnceLock::new(),
        }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `sys` must come from `conjlab_system_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn conjlab_system_free(sys: *mut ConjlabSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn conjlab_system_dimension(sys: *const ConjlabSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.entry.dimension())
}

/// `H(t, ξ)` into `out[len]`; `error_bound` may be null.
///
/// # Safety
/// `xi` and `out` must hold `len` doubles; `error_bound` null or writable.
#[no_mangle]
pub unsafe extern "C" fn conjlab_h_map(
    sys: *const ConjlabSystem,
    t: f64,
    xi: *const f64,
    len: usize,
    out: *mut f64,
    error_bound: *mut f64,
) -> ConjlabStatus {
    guard(|| {
        let s = handle(sys)?;
        let p = read_point(s, xi, len)?;
        let r = s.conjugator().map_err(lib_err)?.h_map(t, &p).map_err(lib_err)?;
        write_slice(out, r.value.as_slice())?;
        if !error_bound.is_null() {
            *error_bound = r.error_bound;
        }
        Ok(())
    })
}

/// `G(t, η)` into `out[len]`; `error_bound` may be null.
///
/// # Safety
/// As `conjlab_h_map`.
#[no_mangle]
pub unsafe extern "C" fn conjlab_g_map(
    sys: *const ConjlabSystem,
    t: f64,
    eta: *const f64,
    len: usize,
    out: *mut f64,
    error_bound: *mut f64,
) -> ConjlabStatus {
    guard(|| {
        let s = handle(sys)?;
        let p = read_point(s, eta, len)?;
        let r = s.conjugator().map_err(lib_err)?.g_map(t, &p).map_err(lib_err)?;
        write_slice(out, r.value.as_slice())?;
        if !error_bound.is_null() {
            *error_bound = r.error_bound;
        }
        Ok(())
    })
}

/// `∂G/∂η(τ, η)` into `out[len*len]`.
///
/// # Safety
/// `eta` must hold `len` doubles and `out` `len*len`.
#[no_mangle]
pub unsafe extern "C" fn conjlab_dg(
    sys: *const ConjlabSystem,
    tau: f64,
    eta: *const f64,
    len: usize,
    out: *mut f64,
) -> ConjlabStatus {
    guard(|| {
        let s = handle(sys)?;
        let p = read_point(s, eta, len)?;
        let c = s.conjugator().map_err(lib_err)?;
        let m = smoothness::dg(c, tau, &p).map_err(lib_err)?;
        write_slice(out, m.as_slice())
    })
}

/// `∂H/∂ξ(τ, ξ)` into `out[len*len]`; `condition` (nullable) receives the
/// condition number of the inverted matrix.
///
/// # Safety
/// As `conjlab_dg`; `condition` null or writable.
#[no_mangle]
pub unsafe extern "C" fn conjlab_dh(
    sys: *const ConjlabSystem,
    tau: f64,
    xi: *const f64,
    len: usize,
    out: *mut f64,
    condition: *mut f64,
) -> ConjlabStatus {
    guard(|| {
        let s = handle(sys)?;
        let p = read_point(s, xi, len)?;
        let c = s.conjugator().map_err(lib_err)?;
        let (m, cond): (DMatrix<f64>, f64) = smoothness::dh(c, tau, &p).map_err(lib_err)?;
        write_slice(out, m.as_slice())?;
        if !condition.is_null() {
            *condition = cond;
        }
        Ok(())
    })
}

/// `X(t, s)` of the linear part into `out[d*d]`.
///
/// # Safety
/// `out` must hold `d*d` doubles with `d = conjlab_system_dimension(sys)`.
#[no_mangle]
pub unsafe extern "C" fn conjlab_transition_matrix(
    sys: *const ConjlabSystem,
    t: f64,
    s: f64,
    out: *mut f64,
) -> ConjlabStatus {
    guard(|| {
        let h = handle(sys)?;
        let m = conjlab::flows::transition_matrix(&h.entry.sys, t, s, &Default::default())
            .map_err(lib_err)?;
        write_slice(out, m.as_slice())
    })
}

/// Runs the hypothesis checks on default grids.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlab_verify(
    sys: *const ConjlabSystem,
    out: *mut ConjlabVerifySummary,
) -> ConjlabStatus {
    guard(|| {
        let h = handle(sys)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let e = &h.entry;
        let r = verify_all(&e.spec, &e.sys, &e.nl, &VerifyGrids::default(), &VerifyOptions::default());
        if let Some((k, msg)) = r.failures.iter().next() {
            return Err((ConjlabStatus::Numerical, format!("{k}: {msg}")));
        }
        let passed = r.passed();
        let flag = |k: &str| passed.get(k).copied().unwrap_or(false) as i32;
        *out = ConjlabVerifySummary {
            p_hat: r.p_hat().unwrap_or(f64::NAN),
            q_hat: r.q_hat().unwrap_or(f64::NAN),
            c1_margin: r.c1.as_ref().map_or(f64::NAN, |c| c.margin),
            c1_passed: flag("c1"),
            c2_passed: flag("c2"),
            c3_passed: flag("c3"),
            c5_passed: flag("c5"),
        };
        Ok(())
    })
}
