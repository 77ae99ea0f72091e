//! C ABI for declqg.
//!
//! Every fallible function returns a [`DeclqgStatus`]; on failure the
//! message is available from [`declqg_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function. Matrices are exchanged as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use declqg::controller::{ControllerState, LinearController};
use declqg::gains_file::GainsFile;
use declqg::linalg::{Mat, Vector};
use declqg::monte_carlo::{estimate_cost, SimulationOptions};
use declqg::problem::{parse_spec, random_instance, validate, BlockDims, ProblemSpec};
use declqg::synthesis::{synthesize, recursion_residuals, Synthesis};
use declqg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclqgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    Validation = 5,
    Dimension = 6,
    Solver = 7,
    HorizonExceeded = 8,
    Structure = 9,
    Io = 10,
    InvalidArgument = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Schedules that can be read from a synthesis handle.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclqgSchedule {
    K = 0,
    L = 1,
    KHat = 2,
    LHat = 3,
    Sigma = 4,
    SigmaHat = 5,
    P = 6,
    PHat = 7,
}

/// A validated problem instance.
pub struct DeclqgProblem {
    spec: ProblemSpec,
}

/// Centralized and two-player solutions of one problem.
pub struct DeclqgSynthesis {
    spec: ProblemSpec,
    syn: Synthesis,
}

/// A stateful controller stepping through the horizon.
pub struct DeclqgController {
    spec: ProblemSpec,
    controller: LinearController,
    state: ControllerState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_for(err: &Error) -> DeclqgStatus {
    match err {
        Error::Invalid(_) => DeclqgStatus::Validation,
        Error::Parse(_) => DeclqgStatus::Parse,
        Error::Schema(_) => DeclqgStatus::Schema,
        Error::Dimension(_) => DeclqgStatus::Dimension,
        Error::SingularInnovation { .. }
        | Error::SingularHessian { .. }
        | Error::EliminationSingular { .. }
        | Error::PivotFailure { .. }
        | Error::Consistency { .. } => DeclqgStatus::Solver,
        Error::HorizonExceeded { .. } => DeclqgStatus::HorizonExceeded,
        Error::Structure(_) => DeclqgStatus::Structure,
        Error::InvalidArgument(_) => DeclqgStatus::InvalidArgument,
        Error::Io(_) => DeclqgStatus::Io,
    }
}

struct Failure(DeclqgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_for(&e), e.to_string())
    }
}

/// Runs `body`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> DeclqgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            DeclqgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            DeclqgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DeclqgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(DeclqgStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn new_problem(spec: ProblemSpec) -> Result<DeclqgProblem, Failure> {
    Ok(DeclqgProblem { spec: validate(spec)?.into_inner() })
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn declqg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn declqg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a problem document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_problem_from_json(json: *const c_char, out: *mut *mut DeclqgProblem) -> DeclqgStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        write_out(out, new_problem(parse_spec(text)?)?)
    })
}

/// Reads and validates a problem file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_problem_load(path: *const c_char, out: *mut *mut DeclqgProblem) -> DeclqgStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        write_out(out, new_problem(declqg::problem::load_spec(path)?)?)
    })
}

/// Generates a reproducible random instance. `dims` holds
/// `n1, n2, m1, m2, p1, p2`.
///
/// # Safety
/// `dims` must point to 6 values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_problem_random(
    seed: u64,
    dims: *const usize,
    horizon: usize,
    coupling: f64,
    out: *mut *mut DeclqgProblem,
) -> DeclqgStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = std::slice::from_raw_parts(dims, 6);
        if horizon == 0 {
            return Err(Failure(DeclqgStatus::InvalidArgument, "horizon must be positive".into()));
        }
        let dims = BlockDims::new(d[0], d[1], d[2], d[3], d[4], d[5])?;
        write_out(out, new_problem(random_instance(seed, dims, horizon, coupling))?)
    })
}

/// Writes `n1, n2, m1, m2, p1, p2` into `dims` and the horizon into
/// `horizon`.
///
/// # Safety
/// `problem` must be a live handle; `dims` must hold 6 values.
#[no_mangle]
pub unsafe extern "C" fn declqg_problem_dims(
    problem: *const DeclqgProblem,
    dims: *mut usize,
    horizon: *mut usize,
) -> DeclqgStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        if dims.is_null() || horizon.is_null() {
            return Err(null("output pointer"));
        }
        let d = p.spec.dims;
        std::slice::from_raw_parts_mut(dims, 6).copy_from_slice(&[d.n1, d.n2, d.m1, d.m2, d.p1, d.p2]);
        *horizon = p.spec.horizon();
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declqg_problem_free(problem: *mut DeclqgProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs the full two-player synthesis.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesize(problem: *const DeclqgProblem, out: *mut *mut DeclqgSynthesis) -> DeclqgStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let syn = synthesize(&p.spec)?;
        write_out(out, DeclqgSynthesis { spec: p.spec.clone(), syn })
    })
}

/// Optimal centralized and two-player costs.
///
/// # Safety
/// `synthesis` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesis_costs(
    synthesis: *const DeclqgSynthesis,
    j0: *mut f64,
    j_hat0: *mut f64,
) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        if j0.is_null() || j_hat0.is_null() {
            return Err(null("output pointer"));
        }
        *j0 = s.syn.centralized.j0;
        *j_hat0 = s.syn.gains.j_hat0;
        Ok(())
    })
}

/// Largest relative residual of the coupled recursions.
///
/// # Safety
/// `synthesis` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesis_residual(synthesis: *const DeclqgSynthesis, out: *mut f64) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = recursion_residuals(&s.spec, &s.syn.centralized, &s.syn.gains).max();
        Ok(())
    })
}

fn schedule(s: &DeclqgSynthesis, which: DeclqgSchedule) -> &[Mat] {
    let (c, g) = (&s.syn.centralized, &s.syn.gains);
    match which {
        DeclqgSchedule::K => &c.k,
        DeclqgSchedule::L => &c.l,
        DeclqgSchedule::KHat => &g.k_hat,
        DeclqgSchedule::LHat => &g.l_hat,
        DeclqgSchedule::Sigma => &c.sigma,
        DeclqgSchedule::SigmaHat => &g.sigma_hat,
        DeclqgSchedule::P => &c.p,
        DeclqgSchedule::PHat => &g.p_hat,
    }
}

/// Copies stage `t` of a schedule into `buf` in row-major order and
/// reports its shape. With `buf` null only the shape is written.
///
/// # Safety
/// `synthesis` must be a live handle; `buf` must hold `len` values;
/// `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesis_matrix(
    synthesis: *const DeclqgSynthesis,
    which: DeclqgSchedule,
    t: usize,
    buf: *mut f64,
    len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        if rows.is_null() || cols.is_null() {
            return Err(null("shape pointer"));
        }
        let seq = schedule(s, which);
        let m = seq.get(t).ok_or_else(|| {
            Failure(DeclqgStatus::InvalidArgument, format!("stage {t} out of range ({} stages)", seq.len()))
        })?;
        *rows = m.nrows();
        *cols = m.ncols();
        if buf.is_null() {
            return Ok(());
        }
        if len < m.len() {
            return Err(Failure(DeclqgStatus::BufferTooSmall, format!("buffer holds {len}, need {}", m.len())));
        }
        let out = std::slice::from_raw_parts_mut(buf, m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Serializes the gains file document. Release with [`declqg_string_free`].
///
/// # Safety
/// `synthesis` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesis_to_json(synthesis: *const DeclqgSynthesis, out: *mut *mut c_char) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = GainsFile::from_synthesis(&s.spec, &s.syn).to_json();
        *out = CString::new(text).map_err(|_| Failure(DeclqgStatus::Panic, "interior NUL".into()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declqg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `synthesis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declqg_synthesis_free(synthesis: *mut DeclqgSynthesis) {
    if !synthesis.is_null() {
        drop(Box::from_raw(synthesis));
    }
}

fn make_controller(s: &DeclqgSynthesis, centralized: bool) -> LinearController {
    if centralized {
        LinearController::centralized(s.spec.dims, &s.syn.centralized)
    } else {
        LinearController::two_player(s.spec.dims, &s.syn.centralized, &s.syn.gains)
    }
}

/// Creates a controller at `t = 0`. A nonzero `centralized` selects the
/// single-estimator law, otherwise the two-player law.
///
/// # Safety
/// `synthesis` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_controller_new(
    synthesis: *const DeclqgSynthesis,
    centralized: i32,
    out: *mut *mut DeclqgController,
) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        let controller = make_controller(s, centralized != 0);
        let state = controller.initial_state(&s.spec);
        write_out(out, DeclqgController { spec: s.spec.clone(), controller, state })
    })
}

/// Feeds measurement `y` (length `p`), writes `u` (length `m`) and
/// advances the controller by one step.
///
/// # Safety
/// `controller` must be a live handle; `y` must hold `y_len` values and
/// `u` must hold `u_len` values.
#[no_mangle]
pub unsafe extern "C" fn declqg_controller_step(
    controller: *mut DeclqgController,
    y: *const f64,
    y_len: usize,
    u: *mut f64,
    u_len: usize,
) -> DeclqgStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        if y.is_null() || u.is_null() {
            return Err(null("measurement or input buffer"));
        }
        let m = c.spec.dims.m();
        if u_len < m {
            return Err(Failure(DeclqgStatus::BufferTooSmall, format!("input buffer holds {u_len}, need {m}")));
        }
        let y = Vector::from_column_slice(std::slice::from_raw_parts(y, y_len));
        let (action, next) = c.controller.step(&c.spec, &c.state, &y)?;
        std::slice::from_raw_parts_mut(u, m).copy_from_slice(action.as_slice());
        c.state = next;
        Ok(())
    })
}

/// Current timestep of the controller.
///
/// # Safety
/// `controller` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn declqg_controller_time(controller: *const DeclqgController) -> usize {
    controller.as_ref().map_or(0, |c| c.state.t)
}

/// Returns the controller to `t = 0` with estimates at the initial mean.
///
/// # Safety
/// `controller` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn declqg_controller_reset(controller: *mut DeclqgController) -> DeclqgStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        c.state = c.controller.initial_state(&c.spec);
        Ok(())
    })
}

/// # Safety
/// `controller` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declqg_controller_free(controller: *mut DeclqgController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Monte Carlo estimate of the closed-loop cost over `rollouts >= 2`
/// rollouts. Thread count follows `DECLQG_THREADS`.
///
/// # Safety
/// `synthesis` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn declqg_simulate(
    synthesis: *const DeclqgSynthesis,
    centralized: i32,
    rollouts: usize,
    seed: u64,
    mean: *mut f64,
    standard_error: *mut f64,
) -> DeclqgStatus {
    guard(|| {
        let s = handle(synthesis, "synthesis")?;
        if mean.is_null() || standard_error.is_null() {
            return Err(null("output pointer"));
        }
        let controller = make_controller(s, centralized != 0);
        let report = estimate_cost(&s.spec, &controller, rollouts, seed, &SimulationOptions::from_env())?;
        *mean = report.mean_cost;
        *standard_error = report.standard_error;
        Ok(())
    })
}
