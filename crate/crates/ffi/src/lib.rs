//! C interface.
//!
//! Every function returns an [`SdmpcStatus`]; on failure a message is kept
//! per thread and can be read with [`sdmpc_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`*_load`/`*_run` and released with the
//! matching `*_free`. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use secure_dmpc::coordinator;
use secure_dmpc::qp::{self, LocalQp};
use secure_dmpc::sim::{self, Mode, ScenarioConfig, SimTrace};
use secure_dmpc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Diverged = 6,
    MitigationUnavailable = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdmpcMode {
    Nominal = 0,
    Attacked = 1,
    Secured = 2,
}

impl From<SdmpcMode> for Mode {
    fn from(m: SdmpcMode) -> Self {
        match m {
            SdmpcMode::Nominal => Mode::Nominal,
            SdmpcMode::Attacked => Mode::Attacked,
            SdmpcMode::Secured => Mode::Secured,
        }
    }
}

/// A loaded scenario.
pub struct SdmpcScenario {
    cfg: ScenarioConfig,
}

/// The result of running a scenario.
pub struct SdmpcTrace {
    trace: SimTrace,
    cfg: ScenarioConfig,
}

/// One local quadratic program.
pub struct SdmpcQp {
    qp: LocalQp,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SdmpcStatus {
    match e {
        Error::InvalidParameter(_) | Error::Shape(_) => SdmpcStatus::InvalidArgument,
        Error::Singular(_) | Error::NonFinite(_) => SdmpcStatus::Numerical,
        Error::Diverged { .. } => SdmpcStatus::Diverged,
        Error::MitigationUnavailable { .. } => SdmpcStatus::MitigationUnavailable,
        Error::Config(_) => SdmpcStatus::Config,
        Error::Io { .. } => SdmpcStatus::Io,
    }
}

struct Fail(SdmpcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SdmpcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SdmpcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SdmpcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn to_path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SdmpcStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn out_of_range(what: &str, index: usize, len: usize) -> Fail {
    Fail(
        SdmpcStatus::OutOfRange,
        format!("{what} {index} out of range (have {len})"),
    )
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the buffer size needed for the whole
/// message, or 0 if there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Load and validate a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_load(
    path: *const c_char,
    out: *mut *mut SdmpcScenario,
) -> SdmpcStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = sim::load_scenario(to_path(path)?)?;
        *out = Box::into_raw(Box::new(SdmpcScenario { cfg }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or come from [`sdmpc_scenario_load`].
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_free(scenario: *mut SdmpcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_set_mode(
    scenario: *mut SdmpcScenario,
    mode: SdmpcMode,
) -> SdmpcStatus {
    guard(|| {
        as_mut(scenario, "scenario")?.cfg.scenario.mode = mode.into();
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_set_seed(
    scenario: *mut SdmpcScenario,
    seed: u64,
) -> SdmpcStatus {
    guard(|| {
        as_mut(scenario, "scenario")?.cfg.scenario.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_agent_count(
    scenario: *const SdmpcScenario,
    out: *mut usize,
) -> SdmpcStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(scenario, "scenario")?.cfg.agent_count();
        Ok(())
    })
}

/// Run the closed loop.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_run(
    scenario: *const SdmpcScenario,
    out: *mut *mut SdmpcTrace,
) -> SdmpcStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = as_ref(scenario, "scenario")?.cfg.clone();
        let trace = sim::run_scenario(&cfg)?;
        *out = Box::into_raw(Box::new(SdmpcTrace { trace, cfg }));
        Ok(())
    })
}

/// Run the attack-gain sweep and write `sweep.csv` into `dir`.
///
/// # Safety
/// `scenario` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_scenario_sweep(
    scenario: *const SdmpcScenario,
    tau_min: f64,
    tau_max: f64,
    tau_steps: usize,
    dir: *const c_char,
) -> SdmpcStatus {
    guard(|| {
        let cfg = &as_ref(scenario, "scenario")?.cfg;
        let grid = sim::tau_grid(tau_min, tau_max, tau_steps)?;
        let report = sim::tau_sweep(cfg, &grid)?;
        sim::write_sweep(&report, to_path(dir)?)?;
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or come from [`sdmpc_scenario_run`].
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_free(trace: *mut SdmpcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_step_count(
    trace: *const SdmpcTrace,
    out: *mut usize,
) -> SdmpcStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(trace, "trace")?.trace.steps.len();
        Ok(())
    })
}

/// Whether any step's negotiation diverged.
///
/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_diverged(
    trace: *const SdmpcTrace,
    out: *mut bool,
) -> SdmpcStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(trace, "trace")?.trace.any_diverged();
        Ok(())
    })
}

fn step_agent(t: &SdmpcTrace, k: usize, agent: usize) -> Result<&sim::StepRecord, Fail> {
    let step = t
        .trace
        .steps
        .get(k)
        .ok_or_else(|| out_of_range("step", k, t.trace.steps.len()))?;
    if agent >= t.trace.names.len() {
        return Err(out_of_range("agent", agent, t.trace.names.len()));
    }
    Ok(step)
}

/// Applied input, air and wall temperature after the step, and the number
/// of negotiation iterations of step `k`.
///
/// # Safety
/// `trace` must be a live handle; output pointers must be writable or null
/// (null outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_sample(
    trace: *const SdmpcTrace,
    k: usize,
    agent: usize,
    u: *mut f64,
    x_air: *mut f64,
    x_wall: *mut f64,
    iterations: *mut usize,
) -> SdmpcStatus {
    guard(|| {
        let step = step_agent(as_ref(trace, "trace")?, k, agent)?;
        if let Some(u) = u.as_mut() {
            *u = step.inputs[agent][0];
        }
        if let Some(x) = x_air.as_mut() {
            *x = step.states[agent][0];
        }
        if let Some(x) = x_wall.as_mut() {
            *x = step.states[agent][1];
        }
        if let Some(it) = iterations.as_mut() {
            *it = step.iterations;
        }
        Ok(())
    })
}

/// Deviation `E` and flag of agent `agent` at step `k`; secured runs only.
///
/// # Safety
/// `trace` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_detection(
    trace: *const SdmpcTrace,
    k: usize,
    agent: usize,
    deviation: *mut f64,
    flagged: *mut bool,
) -> SdmpcStatus {
    guard(|| {
        let step = step_agent(as_ref(trace, "trace")?, k, agent)?;
        let d = step.detections.as_ref().ok_or_else(|| {
            Fail(
                SdmpcStatus::InvalidArgument,
                "trace has no detections".into(),
            )
        })?;
        *as_mut(deviation, "deviation")? = d[agent].deviation;
        *as_mut(flagged, "flagged")? = d[agent].flagged;
        Ok(())
    })
}

/// Accumulated cost of every agent into `per_agent[0..len]` and the sum
/// into `global`.
///
/// # Safety
/// `trace` must be a live handle, `per_agent` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_costs(
    trace: *const SdmpcTrace,
    per_agent: *mut f64,
    len: usize,
    global: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let t = as_ref(trace, "trace")?;
        let report = sim::accumulate_costs(&t.trace, &t.cfg)?;
        if len != report.per_agent.len() {
            return Err(Fail(
                SdmpcStatus::InvalidArgument,
                format!("expected {} cost slots, got {len}", report.per_agent.len()),
            ));
        }
        slice_mut(per_agent, len, "per_agent")?.copy_from_slice(&report.per_agent);
        *as_mut(global, "global")? = report.global;
        Ok(())
    })
}

/// Write `trace.csv`, `costs.csv` and `summary.txt` into `dir`.
///
/// # Safety
/// `trace` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_trace_write(
    trace: *const SdmpcTrace,
    dir: *const c_char,
) -> SdmpcStatus {
    guard(|| {
        let t = as_ref(trace, "trace")?;
        let report = sim::accumulate_costs(&t.trace, &t.cfg)?;
        sim::write_outputs(&t.trace, &report, to_path(dir)?)?;
        Ok(())
    })
}

/// Local problem `min ½UᵀHU + fᵀU  s.t.  ΘU = θ` with `H` n×n and `Θ` c×n.
///
/// # Safety
/// `h` must hold n·n values, `f` n values, `theta` c·n values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_qp_new(
    n: usize,
    c: usize,
    h: *const f64,
    f: *const f64,
    theta: *const f64,
    out: *mut *mut SdmpcQp,
) -> SdmpcStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = ptr::null_mut();
        let h = DMatrix::from_row_slice(n, n, slice(h, n * n, "h")?);
        let f = DVector::from_column_slice(slice(f, n, "f")?);
        let theta = DMatrix::from_row_slice(c, n, slice(theta, c * n, "theta")?);
        let qp = LocalQp::new(h, f, theta)?;
        qp.factor()?;
        *out = Box::into_raw(Box::new(SdmpcQp { qp }));
        Ok(())
    })
}

/// # Safety
/// `qp` must be null or come from [`sdmpc_qp_new`].
#[no_mangle]
pub unsafe extern "C" fn sdmpc_qp_free(qp: *mut SdmpcQp) {
    if !qp.is_null() {
        drop(Box::from_raw(qp));
    }
}

/// Solve for one allocation. `u` receives n values, `lambda` c values;
/// any output may be null.
///
/// # Safety
/// `qp` must be a live handle; `allocation` must hold c values.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_qp_solve(
    qp: *const SdmpcQp,
    allocation: *const f64,
    u: *mut f64,
    lambda: *mut f64,
    cost: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let q = &as_ref(qp, "qp")?.qp;
        let (n, c) = (q.decision_len(), q.coupling_len());
        let alloc = DVector::from_column_slice(slice(allocation, c, "allocation")?);
        let sol = qp::solve_local(q, &alloc)?;
        if !u.is_null() {
            slice_mut(u, n, "u")?.copy_from_slice(sol.u.as_slice());
        }
        if !lambda.is_null() {
            slice_mut(lambda, c, "lambda")?.copy_from_slice(sol.lambda.as_slice());
        }
        if let Some(cost) = cost.as_mut() {
            *cost = sol.cost;
        }
        Ok(())
    })
}

/// Sensitivity pair: `p` receives c·c values row-major, `s` c values.
///
/// # Safety
/// `qp` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_qp_sensitivity(
    qp: *const SdmpcQp,
    p: *mut f64,
    s: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let q = &as_ref(qp, "qp")?.qp;
        let c = q.coupling_len();
        let sens = qp::sensitivity(q)?;
        let p_out = slice_mut(p, c * c, "p")?;
        for i in 0..c {
            for j in 0..c {
                p_out[i * c + j] = sens.p[(i, j)];
            }
        }
        slice_mut(s, c, "s")?.copy_from_slice(sens.s.as_slice());
        Ok(())
    })
}

/// Spectral radius of the negotiation map for `m` effective c×c slopes
/// stored one after another, each row-major.
///
/// # Safety
/// `ps` must hold m·c·c values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_spectral_radius(
    m: usize,
    c: usize,
    ps: *const f64,
    rho: f64,
    out: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let data = slice(ps, m * c * c, "ps")?;
        let blocks: Vec<DMatrix<f64>> = data
            .chunks(c * c)
            .map(|b| DMatrix::from_row_slice(c, c, b))
            .collect();
        *as_mut(out, "out")? = coordinator::iteration_spectral_radius(&blocks, rho);
        Ok(())
    })
}
