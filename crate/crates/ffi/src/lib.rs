//! C interface to the solver.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `*_from_json` functions and released with the matching `*_free`. Every
//! fallible call returns a [`MifbStatus`]; on failure a description is
//! available from [`mifb_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mifb::experiment::{self, Command, Experiment, ExperimentConfig, ExperimentError};
use mifb::numerics::DenseVector;
use mifb::params::{self, StepBounds};
use mifb::penalties;
use mifb::problems::{CompositeProblem, InstanceSpec};
use mifb::solver::{self, InertialSchedule, RunTrace, SolveOptions, SolverError, StepSize};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MifbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Divergence = 4,
    Monitor = 5,
    InsufficientData = 6,
    Io = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MifbCommand {
    Run = 0,
    Compare = 1,
    Rates = 2,
}

/// A composite problem built from an instance description.
pub struct MifbProblem(CompositeProblem);

/// Inertial coefficients and step size.
pub struct MifbSchedule(InertialSchedule);

/// Records and final point of a finished run.
pub struct MifbTrace(RunTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut s = msg.into();
    s.retain(|c| c != '\0');
    let c = CString::new(s).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: MifbStatus, msg: impl Into<String>) -> MifbStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> MifbStatus>(f: F) -> MifbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MifbStatus::Panic, "panic inside the library"),
    }
}

fn solver_status(e: SolverError) -> MifbStatus {
    let status = match &e {
        SolverError::Divergence { .. } => MifbStatus::Divergence,
        SolverError::Shape { .. } | SolverError::InvalidSchedule(_) | SolverError::InvalidOptions(_) => {
            MifbStatus::InvalidArgument
        }
        _ => MifbStatus::Internal,
    };
    fail(status, e.to_string())
}

fn experiment_status(e: ExperimentError) -> MifbStatus {
    let status = match &e {
        ExperimentError::Config(_) => MifbStatus::Config,
        ExperimentError::Divergence { .. } => MifbStatus::Divergence,
        ExperimentError::Monitor(_) => MifbStatus::Monitor,
        ExperimentError::InsufficientData(_) => MifbStatus::InsufficientData,
        ExperimentError::Io { .. } => MifbStatus::Io,
        ExperimentError::Internal(_) => MifbStatus::Internal,
    };
    fail(status, e.to_string())
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MifbStatus> {
    if p.is_null() {
        return Err(fail(MifbStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MifbStatus::InvalidArgument, "string is not valid UTF-8"))
}

/// # Safety
/// `p` must be null or point to `n` readable doubles.
unsafe fn read_slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], MifbStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MifbStatus::NullPointer, "null array argument"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mifb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a problem from an instance description such as
/// `{"kind": "sparse_regression", "seed": 0}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mifb_problem_from_json(spec_json: *const c_char, out: *mut *mut MifbProblem) -> MifbStatus {
    guard(|| {
        if out.is_null() {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        let text = match read_str(spec_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let spec: InstanceSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(MifbStatus::Config, e.to_string()),
        };
        match spec.build() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MifbProblem(p)));
                MifbStatus::Ok
            }
            Err(e) => fail(MifbStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `problem` must be null or a handle from [`mifb_problem_from_json`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mifb_problem_free(problem: *mut MifbProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Ambient dimension, 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mifb_problem_dimension(problem: *const MifbProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.dimension())
}

/// Lipschitz constant of the gradient of the smooth part.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mifb_problem_lipschitz(problem: *const MifbProblem, out: *mut f64) -> MifbStatus {
    guard(|| match (problem.as_ref(), out.is_null()) {
        (Some(p), false) => {
            *out = p.0.lipschitz();
            MifbStatus::Ok
        }
        _ => fail(MifbStatus::NullPointer, "null argument"),
    })
}

/// Objective value `F(x) + R(x)` at `x` of length `n`.
///
/// # Safety
/// `problem` must be a live handle, `x` must hold `n` doubles and `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn mifb_problem_objective(
    problem: *const MifbProblem,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> MifbStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return fail(MifbStatus::NullPointer, "problem is null");
        };
        if out.is_null() {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        if n != p.0.dimension() {
            return fail(MifbStatus::InvalidArgument, format!("x has length {n}, expected {}", p.0.dimension()));
        }
        let x = match read_slice(x, n) {
            Ok(x) => DenseVector::from_column_slice(x),
            Err(s) => return s,
        };
        match p.0.objective(&x) {
            Ok(v) => {
                *out = v;
                MifbStatus::Ok
            }
            Err(e) => fail(MifbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Schedule with memory `s`, coefficients `a`, `b` (each of length `s`) and
/// a constant step `gamma` (absolute, not a fraction of 1/L).
///
/// # Safety
/// `a` and `b` must hold `s` doubles each and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mifb_schedule_new(
    a: *const f64,
    b: *const f64,
    s: usize,
    gamma: f64,
    out: *mut *mut MifbSchedule,
) -> MifbStatus {
    guard(|| {
        if out.is_null() {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        let (a, b) = match (read_slice(a, s), read_slice(b, s)) {
            (Ok(a), Ok(b)) => (a.to_vec(), b.to_vec()),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        match InertialSchedule::new("ffi", a, b, StepSize::Constant(gamma)) {
            Ok(sch) => {
                *out = Box::into_raw(Box::new(MifbSchedule(sch)));
                MifbStatus::Ok
            }
            Err(e) => fail(MifbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mifb_schedule_free(schedule: *mut MifbSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Runs the solver from `x0` (zeros when NULL) and stores the trace in
/// `out`. `tol` is the step-length stopping threshold.
///
/// # Safety
/// Handles must be live, `x0` must be NULL or hold `n` doubles, `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn mifb_solve(
    problem: *const MifbProblem,
    schedule: *const MifbSchedule,
    x0: *const f64,
    n: usize,
    max_iter: usize,
    tol: f64,
    out: *mut *mut MifbTrace,
) -> MifbStatus {
    guard(|| {
        let (Some(p), Some(sch)) = (problem.as_ref(), schedule.as_ref()) else {
            return fail(MifbStatus::NullPointer, "null handle");
        };
        if out.is_null() {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        let start = if x0.is_null() {
            DenseVector::zeros(p.0.dimension())
        } else {
            match read_slice(x0, n) {
                Ok(x) => DenseVector::from_column_slice(x),
                Err(s) => return s,
            }
        };
        let opts = SolveOptions {
            max_iter,
            tol_delta: tol,
            ..SolveOptions::default()
        };
        match solver::mifb_solve(&p.0, &sch.0, &start, &opts) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(MifbTrace(t)));
                MifbStatus::Ok
            }
            Err(e) => solver_status(e),
        }
    })
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mifb_trace_free(trace: *mut MifbTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of iterations performed, 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mifb_trace_iterations(trace: *const MifbTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.iterations())
}

/// Copies the final point into `out`, which must hold exactly `n` doubles.
///
/// # Safety
/// `trace` must be live and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mifb_trace_final_point(trace: *const MifbTrace, out: *mut f64, n: usize) -> MifbStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return fail(MifbStatus::NullPointer, "trace is null");
        };
        let x = &t.0.final_point;
        if out.is_null() {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        if n != x.len() {
            return fail(MifbStatus::InvalidArgument, format!("buffer has {n} slots, point has {}", x.len()));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(x.as_slice());
        MifbStatus::Ok
    })
}

/// Copies up to `n` objective values (one per record, starting at `k = 0`)
/// and returns how many were written.
///
/// # Safety
/// `trace` must be null or live; `out` must be NULL or hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mifb_trace_objective(trace: *const MifbTrace, out: *mut f64, n: usize) -> usize {
    let (Some(t), false) = (trace.as_ref(), out.is_null()) else {
        return 0;
    };
    let dst = std::slice::from_raw_parts_mut(out, n);
    let mut written = 0;
    for (d, r) in dst.iter_mut().zip(&t.0.records) {
        *d = r.phi;
        written += 1;
    }
    written
}

/// Evaluates the feasibility margin `delta` of coefficients `a`, `b` at the
/// stationary constants for a constant step `gamma` and Lipschitz constant
/// `lipschitz`.
///
/// # Safety
/// `a` and `b` must hold `s` doubles; `delta` and `feasible` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mifb_check_feasibility(
    a: *const f64,
    b: *const f64,
    s: usize,
    gamma: f64,
    lipschitz: f64,
    delta: *mut f64,
    feasible: *mut bool,
) -> MifbStatus {
    guard(|| {
        if delta.is_null() || feasible.is_null() {
            return fail(MifbStatus::NullPointer, "null output");
        }
        let (a, b) = match (read_slice(a, s), read_slice(b, s)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        match params::check_feasibility(StepBounds::constant(gamma), a, b, lipschitz) {
            Ok(r) => {
                *delta = r.delta;
                *feasible = r.feasible;
                MifbStatus::Ok
            }
            Err(e) => fail(MifbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Hard thresholding of `z` (length `n`) with parameter `theta` into `out`.
///
/// # Safety
/// `z` and `out` must hold `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn mifb_prox_l0(z: *const f64, n: usize, theta: f64, out: *mut f64) -> MifbStatus {
    guard(|| {
        let z = match read_slice(z, n) {
            Ok(z) => DenseVector::from_column_slice(z),
            Err(s) => return s,
        };
        if out.is_null() && n > 0 {
            return fail(MifbStatus::NullPointer, "out is null");
        }
        match penalties::prox_l0(&z, theta) {
            Ok(x) => {
                if n > 0 {
                    std::slice::from_raw_parts_mut(out, n).copy_from_slice(x.as_slice());
                }
                MifbStatus::Ok
            }
            Err(e) => fail(MifbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs an experiment config and writes its files to `out_dir` (the
/// config's directory when NULL). Plots are skipped when `plot` is false.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` NULL or one.
#[no_mangle]
pub unsafe extern "C" fn mifb_run_experiment(
    command: MifbCommand,
    config_path: *const c_char,
    out_dir: *const c_char,
    plot: bool,
) -> MifbStatus {
    guard(|| {
        let path = match read_str(config_path) {
            Ok(p) => Path::new(p),
            Err(s) => return s,
        };
        let cfg = match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => return experiment_status(e),
        };
        let out = if out_dir.is_null() {
            cfg.output.directory.clone()
        } else {
            match read_str(out_dir) {
                Ok(d) => d.into(),
                Err(s) => return s,
            }
        };
        let plot = plot && cfg.output.plot;
        let exp = match Experiment::new(cfg) {
            Ok(e) => e,
            Err(e) => return experiment_status(e),
        };
        let cmd = match command {
            MifbCommand::Run => Command::Run,
            MifbCommand::Compare => Command::Compare,
            MifbCommand::Rates => Command::Rates,
        };
        match experiment::execute(cmd, &exp, &out, plot, Some(path)) {
            Ok(outcome) => match outcome.status {
                Some(e) => experiment_status(e),
                None => MifbStatus::Ok,
            },
            Err(e) => experiment_status(e),
        }
    })
}
