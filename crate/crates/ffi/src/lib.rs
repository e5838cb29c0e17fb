//! C ABI over the solver.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free`. Every entry point returns a [`QpStatus`] and
//! never unwinds across the boundary. The message for the most recent
//! failure on the calling thread is available from [`qp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qpdelay::config::RunConfig;
use qpdelay::lattice::FourierVector;
use qpdelay::model::{diagonalize, reconstruct_solution, DiagonalizedSpec};
use qpdelay::newton::{run, RunReport, RunStatus};
use qpdelay::QpError;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Ok = 0,
    /// A required pointer was null or a length was wrong.
    InvalidArgument = 1,
    /// The configuration failed to parse or validate.
    Config = 2,
    /// The frequency was excised.
    Excised = 3,
    /// The iteration diverged, stalled or a certificate failed.
    Solver = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

/// Terminal state of a solve, mirrored from the library.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpRunStatus {
    Converged = 0,
    TruncationFloor = 1,
    MaxStages = 2,
    Excised = 3,
    Diverged = 4,
    Failed = 5,
}

impl From<RunStatus> for QpRunStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Converged => Self::Converged,
            RunStatus::TruncationFloor => Self::TruncationFloor,
            RunStatus::MaxStages => Self::MaxStages,
            RunStatus::Excised => Self::Excised,
            RunStatus::Diverged => Self::Diverged,
            RunStatus::Failed => Self::Failed,
        }
    }
}

/// A parsed and diagonalized problem.
pub struct QpProblem {
    config: RunConfig,
    ds: DiagonalizedSpec,
}

/// The outcome of one solve: the report and, on success, the lattice vector.
pub struct QpSolution {
    omega: Vec<f64>,
    report: RunReport,
    y: Option<FourierVector>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &QpError) -> QpStatus {
    match e {
        QpError::Config(_)
        | QpError::EigenvalueRealPart { .. }
        | QpError::NonSimpleSpectrum { .. }
        | QpError::SingularEigenbasis { .. }
        | QpError::DimensionMismatch(_) => QpStatus::Config,
        QpError::Excised(_) => QpStatus::Excised,
        _ => QpStatus::Solver,
    }
}

fn guard<F: FnOnce() -> Result<(), (QpStatus, String)>>(f: F) -> QpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            QpStatus::Internal
        }
    }
}

fn lib_err(e: QpError) -> (QpStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (QpStatus, String) {
    (QpStatus::InvalidArgument, msg.to_string())
}

/// Parses a TOML configuration and diagonalizes the problem.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_problem_from_toml(toml: *const c_char, out: *mut *mut QpProblem) -> QpStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(toml).to_str().map_err(|_| invalid("config is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(lib_err)?;
        let ds = diagonalize(&config.problem).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(QpProblem { config, ds }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`qp_problem_from_toml`] or be null.
#[no_mangle]
pub unsafe extern "C" fn qp_problem_free(problem: *mut QpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of frequencies `d`.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_problem_dim(problem: *const QpProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.config.problem.d)
}

/// Solves at `omega` (length `d`), or at the configured frequency when
/// `omega` is null. A solution handle is returned whenever the run
/// produced a report, including excised and diverged runs, so that the
/// report can be inspected; the status reflects the outcome.
///
/// # Safety
/// `problem` must be a live handle, `omega` null or readable for `len`
/// doubles, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_solve(
    problem: *const QpProblem,
    omega: *const f64,
    len: usize,
    out: *mut *mut QpSolution,
) -> QpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        *out = ptr::null_mut();
        let p = problem.as_ref().ok_or_else(|| invalid("null problem"))?;
        let d = p.config.problem.d;
        let omega = if omega.is_null() {
            p.config.omega()
        } else {
            if len != d {
                return Err(invalid(&format!("omega has {len} entries, d = {d}")));
            }
            std::slice::from_raw_parts(omega, len).to_vec()
        };
        let (report, y) = run(&p.ds, &omega, &p.config.solver);
        let (y, err) = match y {
            Ok(y) => (Some(y), None),
            Err(e) => (None, Some(e)),
        };
        *out = Box::into_raw(Box::new(QpSolution { omega, report, y }));
        match err {
            None => Ok(()),
            Some(e) => Err(lib_err(e)),
        }
    })
}

/// # Safety
/// `solution` must come from [`qp_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn qp_solution_free(solution: *mut QpSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Writes the terminal run status.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qp_solution_status(solution: *const QpSolution, out: *mut QpRunStatus) -> QpStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| invalid("null solution"))?;
        let out = out.as_mut().ok_or_else(|| invalid("null output pointer"))?;
        *out = s.report.status.into();
        Ok(())
    })
}

/// Writes the final lattice residual and the number of Newton stages taken.
///
/// # Safety
/// `solution` must be a live handle; the outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn qp_solution_summary(
    solution: *const QpSolution,
    final_residual: *mut f64,
    stages: *mut usize,
) -> QpStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| invalid("null solution"))?;
        if let Some(r) = final_residual.as_mut() {
            *r = s.report.final_residual;
        }
        if let Some(n) = stages.as_mut() {
            *n = s.report.steps.len();
        }
        Ok(())
    })
}

/// Evaluates the real solution `x(t)` into `out`, which holds `len = 2n`
/// doubles.
///
/// # Safety
/// `solution` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qp_solution_eval(
    problem: *const QpProblem,
    solution: *const QpSolution,
    t: f64,
    out: *mut f64,
    len: usize,
) -> QpStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| invalid("null problem"))?;
        let s = solution.as_ref().ok_or_else(|| invalid("null solution"))?;
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        let y = s.y.as_ref().ok_or_else(|| (QpStatus::Solver, "solve did not produce a solution".to_string()))?;
        let n2 = 2 * p.config.problem.n;
        if len != n2 {
            return Err(invalid(&format!("output has {len} entries, state dimension is {n2}")));
        }
        let x = reconstruct_solution(y, &s.omega, &p.ds.v, &[t]).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&x[0]);
        Ok(())
    })
}

/// Copies the last error message of the calling thread into `buf`,
/// truncated and NUL-terminated. Returns the full message length in bytes,
/// or 0 when there is none.
///
/// # Safety
/// `buf` must be null or writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn qp_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
