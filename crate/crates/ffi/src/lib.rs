//! C interface.
//!
//! Models and Riccati solutions live behind opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible function
//! returns a status code (`MJS_OK` on success); the message of the most
//! recent failure on the calling thread is available from
//! `mjs_last_error_message`. Matrices cross the boundary as row-major
//! `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mjslqr::ce::run_ce_pipeline;
use mjslqr::model::Controller;
use mjslqr::modelfile;
use mjslqr::solvers::{solve_lqr, LqrSolution};
use mjslqr::stability::{closed_loop, is_mss};
use mjslqr::{CostSpec, Mat, MjsError, MjsModel, SolverOptions};

pub const MJS_OK: i32 = 0;
pub const MJS_ERR_NULL_POINTER: i32 = 1;
pub const MJS_ERR_INVALID_UTF8: i32 = 2;
pub const MJS_ERR_BUFFER_SIZE: i32 = 3;
pub const MJS_ERR_PANIC: i32 = 4;
pub const MJS_ERR_DIM_MISMATCH: i32 = 10;
pub const MJS_ERR_INDEX_OUT_OF_RANGE: i32 = 11;
pub const MJS_ERR_NOT_ERGODIC: i32 = 12;
pub const MJS_ERR_NO_CONVERGENCE: i32 = 13;
pub const MJS_ERR_PARSE: i32 = 14;
pub const MJS_ERR_LOAD_INVALID: i32 = 15;
pub const MJS_ERR_EIG_FAILURE: i32 = 16;
pub const MJS_ERR_GAMMA_TOO_SMALL: i32 = 17;
pub const MJS_ERR_NOT_MSS: i32 = 18;
pub const MJS_ERR_SINGULAR: i32 = 19;
pub const MJS_ERR_DIVERGED: i32 = 20;
pub const MJS_ERR_PREMISE_VIOLATION: i32 = 21;
pub const MJS_ERR_SINGULAR_INNER: i32 = 22;
pub const MJS_ERR_HYPOTHESIS_VIOLATION: i32 = 23;
pub const MJS_ERR_NUMERIC_OVERFLOW: i32 = 24;
pub const MJS_ERR_ALL_UNSTABLE: i32 = 25;
pub const MJS_ERR_DEGENERATE: i32 = 26;
pub const MJS_ERR_SCHEMA_MISMATCH: i32 = 27;
pub const MJS_ERR_INVALID_ARGUMENT: i32 = 28;
pub const MJS_ERR_IO: i32 = 29;

/// A plant together with its cost specification.
pub struct MjsModelHandle {
    model: MjsModel,
    cost: CostSpec,
}

/// Optimal solution of the coupled Riccati equations for one model.
pub struct MjsLqrHandle {
    sol: LqrSolution,
    n: usize,
    p: usize,
}

/// Summary of a certainty-equivalent run. Cost fields are NaN when
/// `stabilizes_true` is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MjsCeSummary {
    pub j_star: f64,
    pub j_hat: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub gain_mismatch: f64,
    pub p_mismatch: f64,
    pub delta_p: f64,
    pub rho_hat: f64,
    pub stabilizes_true: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &MjsError) -> i32 {
    match e {
        MjsError::DimMismatch(_) => MJS_ERR_DIM_MISMATCH,
        MjsError::IndexOutOfRange { .. } => MJS_ERR_INDEX_OUT_OF_RANGE,
        MjsError::NotErgodic(_) => MJS_ERR_NOT_ERGODIC,
        MjsError::NoConvergence(_) => MJS_ERR_NO_CONVERGENCE,
        MjsError::Parse { .. } => MJS_ERR_PARSE,
        MjsError::LoadInvalid(_) => MJS_ERR_LOAD_INVALID,
        MjsError::EigFailure => MJS_ERR_EIG_FAILURE,
        MjsError::GammaTooSmall { .. } => MJS_ERR_GAMMA_TOO_SMALL,
        MjsError::NotMss(_) => MJS_ERR_NOT_MSS,
        MjsError::Singular => MJS_ERR_SINGULAR,
        MjsError::Diverged(_) => MJS_ERR_DIVERGED,
        MjsError::PremiseViolation(_) => MJS_ERR_PREMISE_VIOLATION,
        MjsError::SingularInner(_) => MJS_ERR_SINGULAR_INNER,
        MjsError::HypothesisViolation(_) => MJS_ERR_HYPOTHESIS_VIOLATION,
        MjsError::NumericOverflow => MJS_ERR_NUMERIC_OVERFLOW,
        MjsError::AllUnstable => MJS_ERR_ALL_UNSTABLE,
        MjsError::Degenerate(_) => MJS_ERR_DEGENERATE,
        MjsError::SchemaMismatch(_) => MJS_ERR_SCHEMA_MISMATCH,
        MjsError::InvalidArgument(_) => MJS_ERR_INVALID_ARGUMENT,
        MjsError::Io(_) => MJS_ERR_IO,
    }
}

/// Internal failure: a status plus message.
struct Fail(i32, String);

impl From<MjsError> for Fail {
    fn from(e: MjsError) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn null() -> Fail {
    Fail(MJS_ERR_NULL_POINTER, "null pointer argument".into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MJS_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            MJS_ERR_PANIC
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail(MJS_ERR_INVALID_UTF8, "string is not valid UTF-8".into()))
}

unsafe fn write_matrix(m: &Mat, out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    let need = m.nrows() * m.ncols();
    if len < need {
        return Err(Fail(MJS_ERR_BUFFER_SIZE, format!("buffer holds {len} values, need {need}")));
    }
    let buf = std::slice::from_raw_parts_mut(out, need);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf[i * m.ncols() + j] = m[(i, j)];
        }
    }
    Ok(())
}

fn options(tol: f64, max_iter: usize) -> SolverOptions {
    let mut opts = SolverOptions::default();
    if tol > 0.0 {
        opts.tol = tol;
    }
    if max_iter > 0 {
        opts.max_iter = max_iter;
    }
    opts
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mjs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mjs_model_load(path: *const c_char, out: *mut *mut MjsModelHandle) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let (model, cost) = modelfile::load_model(read_str(path)?)?;
        *out = Box::into_raw(Box::new(MjsModelHandle { model, cost }));
        Ok(())
    })
}

/// Parses a model document held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mjs_model_from_string(text: *const c_char, out: *mut *mut MjsModelHandle) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let (model, cost) = modelfile::model_from_str(read_str(text)?)?;
        *out = Box::into_raw(Box::new(MjsModelHandle { model, cost }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `handle` must come from a model constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mjs_model_free(handle: *mut MjsModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Writes the state, input and mode dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mjs_model_dims(handle: *const MjsModelHandle, n: *mut usize, p: *mut usize, s: *mut usize) -> i32 {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        if n.is_null() || p.is_null() || s.is_null() {
            return Err(null());
        }
        (*n, *p, *s) = (h.model.n, h.model.p, h.model.s);
        Ok(())
    })
}

/// Solves the coupled Riccati equations. `tol <= 0` and `max_iter == 0`
/// select the defaults.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_solve(
    model: *const MjsModelHandle,
    tol: f64,
    max_iter: usize,
    out: *mut *mut MjsLqrHandle,
) -> i32 {
    guard(|| {
        let h = model.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let sol = solve_lqr(&h.model, &h.cost, &options(tol, max_iter))?;
        *out = Box::into_raw(Box::new(MjsLqrHandle { sol, n: h.model.n, p: h.model.p }));
        Ok(())
    })
}

/// Releases a solution. Null is ignored.
///
/// # Safety
/// `handle` must come from `mjs_lqr_solve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_free(handle: *mut MjsLqrHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn lqr_mode<'a>(handle: *const MjsLqrHandle, mode: usize) -> Result<&'a MjsLqrHandle, Fail> {
    let h = handle.as_ref().ok_or_else(null)?;
    let s = h.sol.p.x.len();
    if mode >= s {
        return Err(MjsError::IndexOutOfRange { index: mode, modes: s }.into());
    }
    Ok(h)
}

/// Copies `P_mode` (n×n, row-major) into `out`.
///
/// # Safety
/// `out` must hold at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_riccati(handle: *const MjsLqrHandle, mode: usize, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let h = lqr_mode(handle, mode)?;
        write_matrix(&h.sol.p.x[mode], out, len)
    })
}

/// Copies the optimal gain `K_mode` (p×n, row-major) into `out`.
///
/// # Safety
/// `out` must hold at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_gain(handle: *const MjsLqrHandle, mode: usize, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let h = lqr_mode(handle, mode)?;
        write_matrix(&h.sol.k.k[mode], out, len)
    })
}

/// Optimal average cost and closed-loop spectral radius.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_summary(handle: *const MjsLqrHandle, cost: *mut f64, rho: *mut f64, iterations: *mut usize) -> i32 {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        if cost.is_null() || rho.is_null() || iterations.is_null() {
            return Err(null());
        }
        *cost = h.sol.j;
        *rho = h.sol.rho;
        *iterations = h.sol.p.iterations;
        Ok(())
    })
}

/// Mean-square stability of the loop closed by `gains`, given as `s`
/// consecutive row-major p×n blocks (`len = s·p·n`). Writes the spectral
/// radius of the augmented matrix and 1/0 for stable/unstable.
///
/// # Safety
/// `gains` must hold `len` doubles; `rho` and `stable` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mjs_mss_check(
    model: *const MjsModelHandle,
    gains: *const f64,
    len: usize,
    rho: *mut f64,
    stable: *mut i32,
) -> i32 {
    guard(|| {
        let h = model.as_ref().ok_or_else(null)?;
        if gains.is_null() || rho.is_null() || stable.is_null() {
            return Err(null());
        }
        let (n, p, s) = (h.model.n, h.model.p, h.model.s);
        if len != s * p * n {
            return Err(Fail(MJS_ERR_BUFFER_SIZE, format!("gain buffer has {len} values, need {}", s * p * n)));
        }
        let buf = std::slice::from_raw_parts(gains, len);
        let k = Controller::new(buf.chunks(p * n).map(|c| Mat::from_row_slice(p, n, c)).collect());
        let verdict = is_mss(&closed_loop(&h.model, &k)?, &h.model.t)?;
        *rho = verdict.rho;
        *stable = verdict.stable as i32;
        Ok(())
    })
}

/// Certainty-equivalent pipeline: gains from `nominal`, evaluated on
/// `truth` with the truth's cost.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mjs_ce_run(
    truth: *const MjsModelHandle,
    nominal: *const MjsModelHandle,
    tol: f64,
    max_iter: usize,
    out: *mut MjsCeSummary,
) -> i32 {
    guard(|| {
        let t = truth.as_ref().ok_or_else(null)?;
        let nm = nominal.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let r = run_ce_pipeline(&t.model, &nm.model, &t.cost, &options(tol, max_iter))?;
        *out = MjsCeSummary {
            j_star: r.j_star,
            j_hat: r.costs.map_or(f64::NAN, |c| c.j_hat),
            gap: r.costs.map_or(f64::NAN, |c| c.gap),
            relative_gap: r.costs.map_or(f64::NAN, |c| c.relative_gap),
            gain_mismatch: r.gain_mismatch,
            p_mismatch: r.p_mismatch,
            delta_p: r.delta_p,
            rho_hat: r.rho_hat,
            stabilizes_true: r.stabilizes_true as i32,
        };
        Ok(())
    })
}

/// Dimensions of a solution, for sizing buffers.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mjs_lqr_dims(handle: *const MjsLqrHandle, n: *mut usize, p: *mut usize, s: *mut usize) -> i32 {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        if n.is_null() || p.is_null() || s.is_null() {
            return Err(null());
        }
        (*n, *p, *s) = (h.n, h.p, h.sol.p.x.len());
        Ok(())
    })
}
