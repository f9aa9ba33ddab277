//! C ABI for embedding the NMPC solver.
//!
//! Usage from C: create a solver from a JSON run configuration, call
//! `nmpc_solver_step` once per sampling period with the measured state, read
//! back the first input of the optimized plan. The handle keeps the shifted
//! warm start between calls; `nmpc_solver_reset` discards it.
//!
//! Every entry point returns an `nmpc_status` (0 success, 1 bad argument,
//! 2 configuration error, 3 numerical failure) or a pointer that is null on
//! failure; `nmpc_last_error` returns a thread-local message for the most
//! recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use nalgebra::DVector;
use nmpcsolve::config::RunConfig;
use nmpcsolve::error::Error;
use nmpcsolve::ipm::{ipm_solve, IpmInit, MinresKktSolver};
use nmpcsolve::kkt::BlockPattern;
use nmpcsolve::nlp::Nlp;
use nmpcsolve::simloop::shift_warm_start;
use nmpcsolve::transcription::NlpProblem;

pub const NMPC_OK: c_int = 0;
pub const NMPC_BAD_ARGUMENT: c_int = 1;
pub const NMPC_CONFIG_ERROR: c_int = 2;
pub const NMPC_NUMERICAL_ERROR: c_int = 3;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> c_int {
    match err {
        Error::Config(_) => NMPC_CONFIG_ERROR,
        _ => NMPC_NUMERICAL_ERROR,
    }
}

/// Opaque solver handle.
pub struct NmpcSolver {
    nlp: NlpProblem,
    pattern: Arc<BlockPattern>,
    cfg: RunConfig,
    solver: MinresKktSolver,
    warm: Option<IpmInit>,
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call; never free it.
#[no_mangle]
pub extern "C" fn nmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Create a solver from a JSON run configuration (`"{}"` for all defaults).
/// Returns null on failure; see `nmpc_last_error`.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated UTF-8 string or null.
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_new(config_json: *const c_char) -> *mut NmpcSolver {
    if config_json.is_null() {
        set_error("config_json is null");
        return std::ptr::null_mut();
    }
    let text = match CStr::from_ptr(config_json).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("config_json is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    let built = catch_unwind(|| -> Result<NmpcSolver, Error> {
        let cfg = RunConfig::from_json(text)?;
        let (nlp, pattern) = cfg.build_problem()?;
        let solver = MinresKktSolver(cfg.ipm.minres);
        Ok(NmpcSolver { nlp, pattern, cfg, solver, warm: None })
    });
    match built {
        Ok(Ok(s)) => Box::into_raw(Box::new(s)),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// State dimension of the model (6 for the crane), or -1 on a null handle.
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_state_dim(solver: *const NmpcSolver) -> c_int {
    match solver.as_ref() {
        Some(s) => s.nlp.layout.n as c_int,
        None => -1,
    }
}

/// Input dimension of the model (2 for the crane), or -1 on a null handle.
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_input_dim(solver: *const NmpcSolver) -> c_int {
    match solver.as_ref() {
        Some(s) => s.nlp.layout.m as c_int,
        None => -1,
    }
}

/// Solve one MPC sample: set the measured state, run the fixed-iteration IPM
/// (warm-started from the previous call), and write the first optimized input
/// to `u_out`. `x_hat` must hold `state_dim` values, `u_out` space for
/// `input_dim`. On failure the warm start is discarded and `u_out` is left
/// untouched.
///
/// # Safety
/// `x_hat` and `u_out` must point to arrays of at least `x_len` / `u_len`
/// doubles, or be null (rejected with `NMPC_BAD_ARGUMENT`).
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_step(
    solver: *mut NmpcSolver,
    x_hat: *const c_double,
    x_len: usize,
    u_out: *mut c_double,
    u_len: usize,
) -> c_int {
    let Some(s) = solver.as_mut() else {
        set_error("solver handle is null");
        return NMPC_BAD_ARGUMENT;
    };
    if x_hat.is_null() || u_out.is_null() {
        set_error("x_hat / u_out is null");
        return NMPC_BAD_ARGUMENT;
    }
    let (n, m) = (s.nlp.layout.n, s.nlp.layout.m);
    if x_len != n || u_len != m {
        set_error(&format!("expected x_len = {n}, u_len = {m}; got {x_len}, {u_len}"));
        return NMPC_BAD_ARGUMENT;
    }
    let x = DVector::from_iterator(n, (0..n).map(|i| *x_hat.add(i)));

    let stepped = catch_unwind(AssertUnwindSafe(|| -> Result<DVector<f64>, Error> {
        s.nlp.set_x_hat(x)?;
        let res = ipm_solve(&s.nlp, &s.pattern, &s.cfg.ipm, &s.solver, s.warm.take())?;
        let u0 = res.theta.rows(s.nlp.layout.u_offset(0), m).into_owned();
        let theta = shift_warm_start(&s.nlp.layout, &res.theta, &s.nlp.spec.u_bounds)?;
        s.warm = Some(IpmInit {
            theta,
            nu: DVector::zeros(s.nlp.num_eq()),
            lambda: DVector::from_element(s.nlp.num_bounds(), 1.0),
        });
        Ok(u0)
    }));
    match stepped {
        Ok(Ok(u0)) => {
            for i in 0..m {
                *u_out.add(i) = u0[i];
            }
            NMPC_OK
        }
        Ok(Err(e)) => {
            s.warm = None;
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            s.warm = None;
            set_error("internal panic");
            NMPC_NUMERICAL_ERROR
        }
    }
}

/// Discard the warm start so the next step solves cold.
///
/// # Safety
/// `solver` must be a handle from `nmpc_solver_new` or null.
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_reset(solver: *mut NmpcSolver) {
    if let Some(s) = solver.as_mut() {
        s.warm = None;
    }
}

/// Destroy a handle. Null is ignored.
///
/// # Safety
/// `solver` must be a handle from `nmpc_solver_new` (freed at most once) or null.
#[no_mangle]
pub unsafe extern "C" fn nmpc_solver_free(solver: *mut NmpcSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn create_step_free() {
        let cfg = cstr(r#"{"problem": {"horizon": 5}}"#);
        let s = unsafe { nmpc_solver_new(cfg.as_ptr()) };
        assert!(!s.is_null());
        assert_eq!(unsafe { nmpc_solver_state_dim(s) }, 6);
        assert_eq!(unsafe { nmpc_solver_input_dim(s) }, 2);

        let x = [0.5, 0.0, 0.7, 0.0, -0.2, -0.5];
        let mut u = [0.0f64; 2];
        let rc = unsafe { nmpc_solver_step(s, x.as_ptr(), 6, u.as_mut_ptr(), 2) };
        assert_eq!(rc, NMPC_OK);
        assert!(u[0].abs() <= 0.15 && u[1].abs() <= 0.15);
        assert!(u[0] != 0.0 || u[1] != 0.0);

        // Warm-started second call.
        let rc = unsafe { nmpc_solver_step(s, x.as_ptr(), 6, u.as_mut_ptr(), 2) };
        assert_eq!(rc, NMPC_OK);
        unsafe { nmpc_solver_free(s) };
    }

    #[test]
    fn bad_config_returns_null_with_message() {
        let cfg = cstr(r#"{"problem": {"horizonn": 5}}"#);
        let s = unsafe { nmpc_solver_new(cfg.as_ptr()) };
        assert!(s.is_null());
        let msg = unsafe { CStr::from_ptr(nmpc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("horizonn"), "message was: {msg}");
        assert!(unsafe { nmpc_solver_new(std::ptr::null()) }.is_null());
    }

    #[test]
    fn argument_and_numerical_errors() {
        let cfg = cstr("{}");
        let s = unsafe { nmpc_solver_new(cfg.as_ptr()) };
        assert!(!s.is_null());

        let x = [0.5, 0.0, 0.7, 0.0, -0.2, -0.5];
        let mut u = [0.0f64; 2];
        let rc = unsafe { nmpc_solver_step(s, x.as_ptr(), 4, u.as_mut_ptr(), 2) };
        assert_eq!(rc, NMPC_BAD_ARGUMENT);
        let rc = unsafe {
            nmpc_solver_step(s, std::ptr::null(), 6, u.as_mut_ptr(), 2)
        };
        assert_eq!(rc, NMPC_BAD_ARGUMENT);

        // Rope length below the hard minimum: domain error -> numerical status.
        let bad = [0.0, 0.0, 0.01, 0.0, 0.0, 0.0];
        let rc = unsafe { nmpc_solver_step(s, bad.as_ptr(), 6, u.as_mut_ptr(), 2) };
        assert_eq!(rc, NMPC_NUMERICAL_ERROR);

        unsafe { nmpc_solver_reset(s) };
        let rc = unsafe { nmpc_solver_step(s, x.as_ptr(), 6, u.as_mut_ptr(), 2) };
        assert_eq!(rc, NMPC_OK);
        unsafe { nmpc_solver_free(s) };
        unsafe { nmpc_solver_free(std::ptr::null_mut()) };
    }
}
