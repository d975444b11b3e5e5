//! C ABI for embedding the analysis toolkit in other languages.
//!
//! The interface follows the usual opaque-handle pattern:
//!
//! * [`IotSystem`], [`IotConfig`], [`IotEstimate`] and [`IotTrace`] are
//!   handles created by this library and released with the matching `_free`
//!   function. Passing null to a `_free` is a no-op; every other null
//!   argument is rejected with [`IotStatus::NullPointer`].
//! * Fallible calls return an [`IotStatus`]. On failure a message is stored
//!   per thread and stays readable through [`iotlysa_last_error`] until the
//!   next failure on the same thread. Property violations are results, not
//!   errors: they return [`IotStatus::PropertyViolated`] together with a
//!   report, and leave the error message untouched.
//! * Strings handed out through `char **` parameters are NUL-terminated,
//!   owned by the caller, and released with [`iotlysa_string_free`].
//! * A config handle is resolved against the system it was created from and
//!   should only be used with that system. Handles are immutable after
//!   creation.
//!
//! The C header is regenerated into `include/iotlysa.h` on every build.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use iotlysa::cfa;
use iotlysa::config::{parse_config, AnalysisConfig, Policy};
use iotlysa::security::{
    check_actuators, check_confined, check_levels, check_policy, Classification, Verdict,
};
use iotlysa::semantics::run_system;
use iotlysa::{parse_system, Estimate, System, Trace};

/// A parsed and validated system of nodes.
pub struct IotSystem(System);

/// An analysis configuration resolved against one system.
pub struct IotConfig(AnalysisConfig);

/// A solved estimate of stores, messages, computed values and actions.
pub struct IotEstimate(Estimate);

/// One recorded simulation run.
pub struct IotTrace(Trace);

/// Outcome of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IotStatus {
    /// The call succeeded.
    Ok = 0,
    /// The system source did not parse or validate.
    ParseError = 1,
    /// A configuration, property name, or serialized input was unusable.
    ConfigError = 2,
    /// The checked property does not hold; the report has the witnesses.
    PropertyViolated = 3,
    /// An internal failure; the error message has details.
    RuntimeError = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: IotStatus, msg: impl Into<String>) -> IotStatus {
    let c = CString::new(msg.into())
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
    status
}

/// Catches panics at the boundary; unwinding into C is undefined behavior.
fn guarded(f: impl FnOnce() -> Result<IotStatus, IotStatus>) -> IotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) | Ok(Err(s)) => s,
        Err(_) => fail(IotStatus::RuntimeError, "internal panic"),
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, IotStatus> {
    if ptr.is_null() {
        return Err(fail(IotStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(IotStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, IotStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(IotStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slot<'a, T>(ptr: *mut *mut T, what: &str) -> Result<&'a mut *mut T, IotStatus> {
    ptr.as_mut()
        .ok_or_else(|| fail(IotStatus::NullPointer, format!("{what} is null")))
}

fn hand_out(s: String, out: &mut *mut c_char) -> Result<(), IotStatus> {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            Ok(())
        }
        Err(_) => Err(fail(IotStatus::RuntimeError, "output contains a NUL byte")),
    }
}

/// Version of the toolkit as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn iotlysa_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the most recent failure on the calling thread, or null if
/// nothing failed yet. Valid until the next failing call on this thread; do
/// not free.
#[no_mangle]
pub extern "C" fn iotlysa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Parses and validates a system from source text.
///
/// # Safety
/// `source` must point to a NUL-terminated string and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_system_parse(
    source: *const c_char,
    out: *mut *mut IotSystem,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let source = text(source, "source")?;
        let system =
            parse_system(source).map_err(|e| fail(IotStatus::ParseError, e.to_string()))?;
        system
            .validate()
            .map_err(|e| fail(IotStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IotSystem(system)));
        Ok(IotStatus::Ok)
    })
}

/// Prints a system back to its concrete syntax, which parses to the same
/// system.
///
/// # Safety
/// `system` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_system_render(
    system: *const IotSystem,
    out: *mut *mut c_char,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        hand_out(system.0.to_string(), out)?;
        Ok(IotStatus::Ok)
    })
}

/// Releases a system handle. Null is a no-op.
///
/// # Safety
/// `system` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_system_free(system: *mut IotSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Parses a JSON configuration and resolves it against `system`.
///
/// # Safety
/// `json` must point to a NUL-terminated string, `system` must be a live
/// handle, and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_config_parse(
    json: *const c_char,
    system: *const IotSystem,
    out: *mut *mut IotConfig,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        let json = text(json, "json")?;
        let mut cfg =
            parse_config(json).map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
        cfg.resolve_for(&system.0)
            .map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IotConfig(cfg)));
        Ok(IotStatus::Ok)
    })
}

/// Builds the default configuration resolved against `system`.
///
/// # Safety
/// `system` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_config_default(
    system: *const IotSystem,
    out: *mut *mut IotConfig,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        let mut cfg = AnalysisConfig::default();
        cfg.resolve_for(&system.0)
            .map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IotConfig(cfg)));
        Ok(IotStatus::Ok)
    })
}

/// Releases a config handle. Null is a no-op.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_config_free(config: *mut IotConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Solves the least estimate of `system` under `config`.
///
/// # Safety
/// `system` and `config` must be live handles and `out` a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_analyze(
    system: *const IotSystem,
    config: *const IotConfig,
    out: *mut *mut IotEstimate,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        let config = handle(config, "config")?;
        let estimate = cfa::analyze(&system.0, &config.0);
        *out = Box::into_raw(Box::new(IotEstimate(estimate)));
        Ok(IotStatus::Ok)
    })
}

/// Serializes an estimate to pretty-printed JSON, byte-identical to the
/// files the command line tool writes.
///
/// # Safety
/// `estimate` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_estimate_to_json(
    estimate: *const IotEstimate,
    out: *mut *mut c_char,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let estimate = handle(estimate, "estimate")?;
        let mut json = serde_json::to_string_pretty(&estimate.0)
            .map_err(|e| fail(IotStatus::RuntimeError, e.to_string()))?;
        json.push('\n');
        hand_out(json, out)?;
        Ok(IotStatus::Ok)
    })
}

/// Loads an estimate previously serialized with `iotlysa_estimate_to_json`.
///
/// # Safety
/// `json` must point to a NUL-terminated string and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_estimate_parse(
    json: *const c_char,
    out: *mut *mut IotEstimate,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let json = text(json, "json")?;
        let estimate: Estimate = serde_json::from_str(json)
            .map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IotEstimate(estimate)));
        Ok(IotStatus::Ok)
    })
}

/// Releases an estimate handle. Null is a no-op.
///
/// # Safety
/// `estimate` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_estimate_free(estimate: *mut IotEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// Runs one simulation with the given seed. The seed overrides the
/// configured one; the step budget and sensor streams come from `config`.
///
/// # Safety
/// `system` and `config` must be live handles and `out` a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_simulate(
    system: *const IotSystem,
    config: *const IotConfig,
    seed: u64,
    out: *mut *mut IotTrace,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        let config = handle(config, "config")?;
        let mut cfg = config.0.clone();
        cfg.seed = seed;
        *out = Box::into_raw(Box::new(IotTrace(run_system(&system.0, &cfg))));
        Ok(IotStatus::Ok)
    })
}

/// Serializes a trace to newline-delimited JSON, one event per line.
///
/// # Safety
/// `trace` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_trace_to_ndjson(
    trace: *const IotTrace,
    out: *mut *mut c_char,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let trace = handle(trace, "trace")?;
        hand_out(trace.0.to_ndjson(), out)?;
        Ok(IotStatus::Ok)
    })
}

/// Loads a trace previously serialized with `iotlysa_trace_to_ndjson`.
///
/// # Safety
/// `ndjson` must point to a NUL-terminated string and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_trace_parse(
    ndjson: *const c_char,
    out: *mut *mut IotTrace,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let ndjson = text(ndjson, "ndjson")?;
        let trace =
            Trace::from_ndjson(ndjson).map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IotTrace(trace)));
        Ok(IotStatus::Ok)
    })
}

/// Releases a trace handle. Null is a no-op.
///
/// # Safety
/// `trace` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_trace_free(trace: *mut IotTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Replays a trace against an estimate. Writes a JSON array of violations
/// and returns `Ok` when it is empty, `PropertyViolated` otherwise.
///
/// # Safety
/// `trace` and `estimate` must be live handles and `out` a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_cross_check(
    trace: *const IotTrace,
    estimate: *const IotEstimate,
    out: *mut *mut c_char,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let trace = handle(trace, "trace")?;
        let estimate = handle(estimate, "estimate")?;
        let violations = cfa::cross_check(&trace.0, &estimate.0);
        let mut json = serde_json::to_string_pretty(&violations)
            .map_err(|e| fail(IotStatus::RuntimeError, e.to_string()))?;
        json.push('\n');
        hand_out(json, out)?;
        Ok(if violations.is_empty() {
            IotStatus::Ok
        } else {
            IotStatus::PropertyViolated
        })
    })
}

/// Checks a named property of a solved estimate and writes a JSON array of
/// verdicts. Supported names: "confinement", "levels", "policy",
/// "actuators". Returns `Ok` when every verdict holds, `PropertyViolated`
/// when one fails, and `ConfigError` for an unknown name or a configuration
/// that cannot support the check.
///
/// # Safety
/// `system`, `config` and `estimate` must be live handles, `property` must
/// point to a NUL-terminated string, and `out` to a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_check(
    system: *const IotSystem,
    config: *const IotConfig,
    estimate: *const IotEstimate,
    property: *const c_char,
    out: *mut *mut c_char,
) -> IotStatus {
    guarded(|| {
        let out = slot(out, "out")?;
        let system = handle(system, "system")?;
        let config = handle(config, "config")?;
        let estimate = handle(estimate, "estimate")?;
        let property = text(property, "property")?;
        let cfg = &config.0;
        let cls = Classification::from_config(cfg);

        let mut verdicts: Vec<Verdict> = Vec::new();
        match property {
            "confinement" => {
                let labels: Vec<_> = cfg
                    .secret
                    .iter()
                    .filter(|(_, atoms)| !atoms.is_empty())
                    .map(|(l, _)| l.clone())
                    .collect();
                if labels.is_empty() {
                    return Err(fail(
                        IotStatus::ConfigError,
                        "confinement needs secret atoms in the configuration",
                    ));
                }
                for l in labels {
                    verdicts.push(check_confined(&estimate.0, &cls, &l));
                }
            }
            "levels" => {
                let verdict = check_levels(&estimate.0, &cfg.levels)
                    .map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
                verdicts.push(verdict);
            }
            "policy" => match &cfg.policy {
                Policy::None => {
                    return Err(fail(
                        IotStatus::ConfigError,
                        "policy check requested but the configuration declares none",
                    ))
                }
                Policy::Levels => {
                    let verdict = check_levels(&estimate.0, &cfg.levels)
                        .map_err(|e| fail(IotStatus::ConfigError, e.to_string()))?;
                    verdicts.push(verdict);
                }
                Policy::Pairs(allowed) => verdicts.push(check_policy(&estimate.0, allowed)),
            },
            "actuators" => verdicts.push(check_actuators(&estimate.0, &system.0).verdict()),
            other => {
                return Err(fail(
                    IotStatus::ConfigError,
                    format!("unknown property: {other}"),
                ))
            }
        }

        let mut json = serde_json::to_string_pretty(&verdicts)
            .map_err(|e| fail(IotStatus::RuntimeError, e.to_string()))?;
        json.push('\n');
        hand_out(json, out)?;
        Ok(if verdicts.iter().all(|v| v.holds) {
            IotStatus::Ok
        } else {
            IotStatus::PropertyViolated
        })
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iotlysa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
