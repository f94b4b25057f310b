//! C ABI over the distgof library.
//!
//! Every fallible function returns a [`DgStatus`]; on failure the message is
//! available from [`dg_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Strings returned by
//! accessors are borrowed from the handle and live until it is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distgof::cli::{self, Command, RunOptions};
use distgof::equivalence_lab::{tv_exact, FiniteMeasure};
use distgof::exec::Exec;
use distgof::models::SimplexVector;
use distgof::protocols::{self, ProtocolSpec};
use distgof::Error;

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed or incomplete config, unknown preset.
    Config = 3,
    /// Arguments violate a documented precondition.
    Validation = 4,
    /// Parameters outside the regime a procedure is defined for.
    Regime = 5,
    /// Bracket or other numerical failure.
    Numerical = 6,
    Panic = 7,
}

impl From<&Error> for DgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) => DgStatus::Config,
            Error::Regime(_) => DgStatus::Regime,
            Error::Bracket { .. } | Error::Numerical(_) => DgStatus::Numerical,
            _ => DgStatus::Validation,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: DgStatus, msg: impl Into<String>) -> DgStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> DgStatus) -> DgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DgStatus::Panic, msg)
        }
    }
}

fn from_lib(e: Error) -> DgStatus {
    let s = DgStatus::from(&e);
    fail(s, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, DgStatus> {
    if p.is_null() {
        return Err(fail(DgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DgStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn c_string(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).expect("interior nul removed")
}

/// Message of the last failed call on this thread, or null. Borrowed until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Process exit code the command-line tool uses for `status`.
#[no_mangle]
pub extern "C" fn dg_status_exit_code(status: DgStatus) -> i32 {
    match status {
        DgStatus::Ok => 0,
        DgStatus::Regime => 3,
        DgStatus::Numerical => 4,
        _ => 2,
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Result of one experiment run.
pub struct DgRun {
    csv: CString,
    summary: Option<CString>,
    report: CString,
    hash: CString,
}

/// Run a subcommand (`calibrate`, `risk`, `sweep`, `equiv` or `noneq`).
///
/// `config_json` may be null (then `preset` must name a preset); `preset`
/// may be null. `seed` may be null to use the config's seed. `jobs` = 0
/// uses the config's value or 1.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `seed`
/// must be null or point to a readable `uint64_t`; `out` must be a valid
/// pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dg_run(
    command: *const c_char,
    config_json: *const c_char,
    preset: *const c_char,
    seed: *const u64,
    jobs: u32,
    out: *mut *mut DgRun,
) -> DgStatus {
    guard(|| {
        if out.is_null() {
            return fail(DgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cmd = match read_str(command, "command") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let command: Command = match serde_json::from_value(serde_json::Value::String(cmd.into())) {
            Ok(c) => c,
            Err(_) => return fail(DgStatus::Config, format!("unknown command `{cmd}`")),
        };
        let raw = if config_json.is_null() {
            None
        } else {
            let text = match read_str(config_json, "config_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(v) => Some(v),
                Err(e) => return fail(DgStatus::Config, format!("config is not valid JSON: {e}")),
            }
        };
        let preset = if preset.is_null() {
            None
        } else {
            match read_str(preset, "preset") {
                Ok(p) => Some(p.to_owned()),
                Err(s) => return s,
            }
        };
        let opts = RunOptions {
            seed: if seed.is_null() { None } else { Some(*seed) },
            jobs: if jobs == 0 { None } else { Some(jobs as usize) },
            preset,
            wall_time: false,
        };
        match cli::run(command, raw, &opts) {
            Ok(r) => {
                let run = DgRun {
                    csv: c_string(&r.main_csv),
                    summary: r.summary_csv.as_deref().map(c_string),
                    report: c_string(&r.report.to_string()),
                    hash: c_string(&r.config_hash),
                };
                *out = Box::into_raw(Box::new(run));
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Main results CSV, metadata block included.
///
/// # Safety
/// `run` must be null or a handle from [`dg_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_run_csv(run: *const DgRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.csv.as_ptr())
}

/// Fit summary CSV, or null for commands without one.
///
/// # Safety
/// As [`dg_run_csv`].
#[no_mangle]
pub unsafe extern "C" fn dg_run_summary_csv(run: *const DgRun) -> *const c_char {
    run.as_ref()
        .and_then(|r| r.summary.as_ref())
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Structured report as JSON.
///
/// # Safety
/// As [`dg_run_csv`].
#[no_mangle]
pub unsafe extern "C" fn dg_run_report_json(run: *const DgRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.report.as_ptr())
}

/// Hex SHA-256 of the resolved config and seed.
///
/// # Safety
/// As [`dg_run_csv`].
#[no_mangle]
pub unsafe extern "C" fn dg_run_config_hash(run: *const DgRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.hash.as_ptr())
}

/// # Safety
/// `run` must be null or a handle from [`dg_run`]; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_run_free(run: *mut DgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Finite probability measure on integer atoms.
pub struct DgMeasure {
    inner: FiniteMeasure,
}

/// # Safety
/// `atoms` and `weights` must point to `len` readable elements; `out` must
/// be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dg_measure_new(
    atoms: *const i64,
    weights: *const f64,
    len: usize,
    out: *mut *mut DgMeasure,
) -> DgStatus {
    guard(|| {
        if out.is_null() || atoms.is_null() || weights.is_null() {
            return fail(DgStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let a = std::slice::from_raw_parts(atoms, len).to_vec();
        let w = std::slice::from_raw_parts(weights, len).to_vec();
        match FiniteMeasure::probability(a, w) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(DgMeasure { inner: m }));
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Total variation distance, ½ Σ |p − q|.
///
/// # Safety
/// `p` and `q` must be live measure handles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dg_tv(p: *const DgMeasure, q: *const DgMeasure, out: *mut f64) -> DgStatus {
    guard(|| {
        let (Some(p), Some(q)) = (p.as_ref(), q.as_ref()) else {
            return fail(DgStatus::NullPointer, "null measure");
        };
        if out.is_null() {
            return fail(DgStatus::NullPointer, "out is null");
        }
        match tv_exact(&p.inner, &q.inner) {
            Ok(v) => {
                *out = v;
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// # Safety
/// `m` must be null or a live measure handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_measure_free(m: *mut DgMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// A protocol spec, calibrated or not.
pub struct DgProtocol {
    spec: ProtocolSpec,
}

/// Parse a protocol spec from its JSON form.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dg_protocol_from_json(json: *const c_char, out: *mut *mut DgProtocol) -> DgStatus {
    guard(|| {
        if out.is_null() {
            return fail(DgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let spec: ProtocolSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(DgStatus::Config, e.to_string()),
        };
        if let Err(e) = spec.validate() {
            return from_lib(e);
        }
        *out = Box::into_raw(Box::new(DgProtocol { spec }));
        DgStatus::Ok
    })
}

/// Calibrate in place under the uniform null.
///
/// # Safety
/// `p` must be a live protocol handle.
#[no_mangle]
pub unsafe extern "C" fn dg_protocol_calibrate(p: *mut DgProtocol, alpha: f64, reps: usize, seed: u64, jobs: u32) -> DgStatus {
    guard(|| {
        let Some(p) = p.as_mut() else {
            return fail(DgStatus::NullPointer, "null protocol");
        };
        let q0 = SimplexVector::uniform(p.spec.d);
        match protocols::calibrate(&p.spec, &q0, alpha, reps, seed, &Exec::new(jobs as usize)) {
            Ok(s) => {
                p.spec = s;
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Threshold of a calibrated protocol.
///
/// # Safety
/// `p` must be a live protocol handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dg_protocol_threshold(p: *const DgProtocol, out: *mut f64) -> DgStatus {
    guard(|| {
        let Some(p) = p.as_ref() else {
            return fail(DgStatus::NullPointer, "null protocol");
        };
        if out.is_null() {
            return fail(DgStatus::NullPointer, "out is null");
        }
        match p.spec.threshold() {
            Ok(t) => {
                *out = t;
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Fresh-sample type I error of a calibrated protocol.
///
/// # Safety
/// `p` must be a live protocol handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dg_protocol_type_one(p: *const DgProtocol, reps: usize, seed: u64, jobs: u32, out: *mut f64) -> DgStatus {
    guard(|| {
        let Some(p) = p.as_ref() else {
            return fail(DgStatus::NullPointer, "null protocol");
        };
        if out.is_null() {
            return fail(DgStatus::NullPointer, "out is null");
        }
        if reps == 0 {
            return fail(DgStatus::Validation, "reps must be positive");
        }
        let q0 = SimplexVector::uniform(p.spec.d);
        match protocols::type_one_error(&p.spec, &q0, reps, seed, &Exec::new(jobs as usize)) {
            Ok(v) => {
                *out = v;
                DgStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// # Safety
/// `p` must be null or a live protocol handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_protocol_free(p: *mut DgProtocol) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}
