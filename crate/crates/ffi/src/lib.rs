//! C ABI over the `swarm_escape` simulator.
//!
//! Objects cross the boundary as opaque handles created by `se_*_new`/`load`
//! style functions and released by the matching `*_free`. Every fallible call
//! returns an [`SeStatus`]; the message of the most recent failure on the
//! calling thread is available from [`se_last_error`]. Panics never unwind
//! into C: they are caught and reported as [`SeStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use swarm_escape::detection::{chi2_quantile, cusum_step, DetectorState};
use swarm_escape::dynamics::AgentModel;
use swarm_escape::estimation::StackedModel;
use swarm_escape::safety::{escape_time, EscapeQuery};
use swarm_escape::scenario::{run, ScenarioConfig, SimTrace};
use swarm_escape::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    Ok = 0,
    /// Invalid configuration, argument or dimension.
    Config = 1,
    /// A safety contract could not be met.
    Safety = 2,
    Numerical = 3,
    NullPointer = 4,
    Io = 5,
    Panic = 6,
}

/// Scenario configuration.
pub struct SeScenario(ScenarioConfig);

/// Finished simulation run.
pub struct SeTrace(SimTrace);

/// CUSUM spoofing detector.
pub struct SeDetector(DetectorState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> SeStatus {
    match err {
        Error::Config { .. } | Error::Dimension { .. } => SeStatus::Config,
        Error::Numerical(_) => SeStatus::Numerical,
        Error::Contract(_) | Error::EscapeDiverged { .. } => SeStatus::Safety,
        Error::Io(_) => SeStatus::Io,
    }
}

struct Failure(SeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SeStatus::NullPointer, format!("null pointer: {what}"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SeStatus::Config, msg.into())
}

/// Runs `f`, records any failure and maps it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SeStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread. Empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn se_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a TOML scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn se_scenario_load(path: *const c_char, out: *mut *mut SeScenario) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let config = ScenarioConfig::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(SeScenario(config)));
        Ok(())
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn se_scenario_from_toml(text: *const c_char, out: *mut *mut SeScenario) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = ScenarioConfig::from_toml_str(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(SeScenario(config)));
        Ok(())
    })
}

/// Overrides the seed of a loaded scenario.
///
/// # Safety
/// `scenario` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn se_scenario_set_seed(scenario: *mut SeScenario, seed: u64) -> SeStatus {
    guard(|| {
        out_arg(scenario, "scenario")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn se_scenario_free(scenario: *mut SeScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the simulation.
///
/// # Safety
/// `scenario` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_run(scenario: *const SeScenario, out: *mut *mut SeTrace) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scenario = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let trace = run(&scenario.0)?;
        *out = Box::into_raw(Box::new(SeTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or come from [`se_run`], and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn se_trace_free(trace: *mut SeTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of simulated ticks and whether every agent arrived.
///
/// # Safety
/// `trace` must come from [`se_run`]; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_trace_outcome(trace: *const SeTrace, ticks: *mut u64, completed: *mut bool) -> SeStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        *out_arg(ticks, "ticks")? = trace.0.summary.ticks;
        *out_arg(completed, "completed")? = trace.0.summary.completed;
        Ok(())
    })
}

/// Writes the per-tick CSV.
///
/// # Safety
/// `trace` must come from [`se_run`]; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn se_trace_write_csv(trace: *const SeTrace, path: *const c_char) -> SeStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        trace.0.write_csv(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Run summary as JSON. Release the string with [`se_string_free`].
///
/// # Safety
/// `trace` must come from [`se_run`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_trace_summary_json(trace: *const SeTrace, out: *mut *mut c_char) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        let json = CString::new(trace.0.summary.to_json()).map_err(|_| invalid("summary contains NUL"))?;
        *out = json.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn se_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Upper-tail χ² quantile with `df` degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_chi2_quantile(alpha: f64, df: usize, out: *mut f64) -> SeStatus {
    guard(|| {
        *out_arg(out, "out")? = chi2_quantile(alpha, df)?;
        Ok(())
    })
}

/// Escape time of the reference double integrator (dt = 0.1) without GPS.
/// `p_at_attack` is the 4x4 covariance at detection, row-major; `zeta`
/// covers the leading `zeta_len` states.
///
/// # Safety
/// `zeta` must hold `zeta_len` values, `p_at_attack` 16 values, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_escape_time(
    zeta: *const f64,
    zeta_len: usize,
    alpha: f64,
    p_at_attack: *const f64,
    out: *mut usize,
) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let zeta = slice_arg(zeta, zeta_len, "zeta")?;
        let p = slice_arg(p_at_attack, 16, "p_at_attack")?;
        let model = AgentModel::default();
        let query = EscapeQuery {
            zeta: DVector::from_row_slice(zeta),
            alpha,
            p_at_attack: DMatrix::from_row_slice(4, 4, p),
            k_a: 0,
        };
        *out = escape_time(&model, &StackedModel::imu_only(&model), &query)?;
        Ok(())
    })
}

/// Creates a CUSUM detector with threshold `χ²_df(α) / (1 − δ)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_detector_new(alpha: f64, delta: f64, df: usize, out: *mut *mut SeDetector) -> SeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let det = DetectorState::new(alpha, delta, df)?;
        *out = Box::into_raw(Box::new(SeDetector(det)));
        Ok(())
    })
}

/// Feeds one attack-vector estimate `d_hat` (length df) with its covariance
/// `p_d` (df x df, row-major). Writes the updated statistic and decision.
///
/// # Safety
/// `detector` must come from [`se_detector_new`]; the arrays must hold df
/// and df² values; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_detector_step(
    detector: *mut SeDetector,
    d_hat: *const f64,
    p_d: *const f64,
    statistic: *mut f64,
    attacked: *mut bool,
) -> SeStatus {
    guard(|| {
        let det = out_arg(detector, "detector")?;
        let n = det.0.df;
        let d = DVector::from_row_slice(slice_arg(d_hat, n, "d_hat")?);
        let p = DMatrix::from_row_slice(n, n, slice_arg(p_d, n * n, "p_d")?);
        let statistic = out_arg(statistic, "statistic")?;
        let attacked = out_arg(attacked, "attacked")?;
        let (next, decision) = cusum_step(&det.0, &d, &p)?;
        det.0 = next;
        *statistic = det.0.s;
        *attacked = decision.is_attacked();
        Ok(())
    })
}

/// # Safety
/// `detector` must be null or come from [`se_detector_new`], and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn se_detector_free(detector: *mut SeDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::config("a", "b")), SeStatus::Config);
        assert_eq!(status_of(&Error::Numerical("x".into())), SeStatus::Numerical);
        assert_eq!(status_of(&Error::EscapeDiverged { cap: 1 }), SeStatus::Safety);
        assert_eq!(status_of(&Error::Io(std::io::Error::other("x"))), SeStatus::Io);
    }

    #[test]
    fn panics_are_contained() {
        let code = guard(|| panic!("boom"));
        assert_eq!(code, SeStatus::Panic);
        let msg = unsafe { CStr::from_ptr(se_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("boom"), "{msg}");
    }
}
