//! C ABI for the temporal Bell toolkit. Experiment specs travel as JSON
//! strings and come back as opaque handles; reports come back as JSON
//! strings the caller releases with `tb_string_free`. Numeric fast paths
//! (closed forms, exact pair probabilities) avoid JSON entirely.
//!
//! Every function returns a [`TbStatus`]; on failure a thread-local message
//! is readable through [`tb_last_error_message`]. The generated header
//! lives at `include/temporal_bell.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use temporal_bell::geometry::{Config, Direction, Outcome, SettingLabel};
use temporal_bell::harness::{resolve_seed, run_experiment, ExperimentSpec, RunOptions};
use temporal_bell::inequality::{quantum_lhs_16, quantum_lhs_18, ExactPairProbs, PairProbs};
use temporal_bell::quantum::QubitState;
use temporal_bell::Error;

/// Result of every ABI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbStatus {
    /// The call succeeded.
    Ok = 0,
    /// The inputs were invalid (malformed JSON, bad directions, bad spec).
    ConfigurationError = 1,
    /// The operation itself failed (I/O, serialization, internal panic).
    RuntimeError = 2,
    /// A required pointer argument was null.
    NullArgument = 3,
    /// A string argument was not valid UTF-8.
    InvalidString = 4,
}

/// Measurement setting selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbSetting {
    A = 0,
    B = 1,
    C = 2,
}

/// Measurement outcome selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbOutcome {
    Plus = 1,
    Minus = -1,
}

/// Opaque parsed experiment spec; create with [`tb_spec_parse`], release
/// with [`tb_spec_free`].
pub struct TbSpec {
    inner: ExperimentSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn fail(status: TbStatus, message: &str) -> TbStatus {
    set_last_error(message);
    status
}

fn fail_with(error: &Error) -> TbStatus {
    let status = if error.is_configuration() {
        TbStatus::ConfigurationError
    } else {
        TbStatus::RuntimeError
    };
    fail(status, &error.to_string())
}

/// Runs a closure with panics converted to `RuntimeError`, so unwinding
/// never crosses the ABI boundary.
fn guarded(body: impl FnOnce() -> TbStatus) -> TbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(TbStatus::RuntimeError, "internal panic"),
    }
}

/// Reads a required UTF-8 C string argument.
///
/// # Safety
/// `input` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(input: *const c_char) -> Result<&'a str, TbStatus> {
    if input.is_null() {
        return Err(fail(TbStatus::NullArgument, "string argument is null"));
    }
    unsafe { CStr::from_ptr(input) }
        .to_str()
        .map_err(|_| fail(TbStatus::InvalidString, "string argument is not UTF-8"))
}

/// Reads a required 3-component vector argument.
///
/// # Safety
/// `input` must be null or point to three readable doubles.
unsafe fn read_vec3(input: *const f64, name: &str) -> Result<[f64; 3], TbStatus> {
    if input.is_null() {
        return Err(fail(
            TbStatus::NullArgument,
            &format!("vector argument {name} is null"),
        ));
    }
    let slice = unsafe { std::slice::from_raw_parts(input, 3) };
    Ok([slice[0], slice[1], slice[2]])
}

unsafe fn read_config(
    a: *const f64,
    b: *const f64,
    c: *const f64,
) -> Result<Config, TbStatus> {
    let make = |components: [f64; 3]| {
        Direction::new(components[0], components[1], components[2]).map_err(|e| fail_with(&e))
    };
    Ok(Config {
        a: make(unsafe { read_vec3(a, "a")? })?,
        b: make(unsafe { read_vec3(b, "b")? })?,
        c: make(unsafe { read_vec3(c, "c")? })?,
    })
}

fn write_out<T>(out: *mut T, value: T) -> Result<(), TbStatus> {
    if out.is_null() {
        return Err(fail(TbStatus::NullArgument, "output pointer is null"));
    }
    unsafe { out.write(value) };
    Ok(())
}

fn json_out(out: *mut *mut c_char, json: String) -> TbStatus {
    let c = match CString::new(json) {
        Ok(c) => c,
        Err(_) => return fail(TbStatus::RuntimeError, "JSON contained a NUL byte"),
    };
    match write_out(out, c.into_raw()) {
        Ok(()) => TbStatus::Ok,
        Err(status) => status,
    }
}

impl From<TbSetting> for SettingLabel {
    fn from(setting: TbSetting) -> SettingLabel {
        match setting {
            TbSetting::A => SettingLabel::A,
            TbSetting::B => SettingLabel::B,
            TbSetting::C => SettingLabel::C,
        }
    }
}

impl From<TbOutcome> for Outcome {
    fn from(outcome: TbOutcome) -> Outcome {
        match outcome {
            TbOutcome::Plus => Outcome::Plus,
            TbOutcome::Minus => Outcome::Minus,
        }
    }
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn tb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing this thread's most recent failure, empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `string` must be null or a pointer obtained from this library and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn tb_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(unsafe { CString::from_raw(string) });
    }
}

/// Parses and validates an experiment spec from JSON; on success stores an
/// owned handle in `out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tb_spec_parse(json: *const c_char, out: *mut *mut TbSpec) -> TbStatus {
    guarded(|| {
        let text = match unsafe { read_str(json) } {
            Ok(text) => text,
            Err(status) => return status,
        };
        let spec = match ExperimentSpec::from_json(text) {
            Ok(spec) => spec,
            Err(err) => return fail_with(&err),
        };
        let handle = Box::into_raw(Box::new(TbSpec { inner: spec }));
        match write_out(out, handle) {
            Ok(()) => TbStatus::Ok,
            Err(status) => {
                drop(unsafe { Box::from_raw(handle) });
                status
            }
        }
    })
}

/// Releases a spec handle. Null is a no-op.
///
/// # Safety
/// `spec` must be null or a handle from [`tb_spec_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tb_spec_free(spec: *mut TbSpec) {
    if !spec.is_null() {
        drop(unsafe { Box::from_raw(spec) });
    }
}

/// Runs the experiment described by `spec` and stores the report as a JSON
/// string in `report_json_out` (free with [`tb_string_free`]). A null
/// `seed` falls back to the spec's seed, the TBS_SEED environment
/// variable, then 0.
///
/// # Safety
/// `spec` must be a live handle from [`tb_spec_parse`]; `seed` must be
/// null or readable; `report_json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tb_experiment_run(
    spec: *const TbSpec,
    seed: *const u64,
    report_json_out: *mut *mut c_char,
) -> TbStatus {
    guarded(|| {
        if spec.is_null() {
            return fail(TbStatus::NullArgument, "spec handle is null");
        }
        let spec = unsafe { &(*spec).inner };
        let cli_seed = if seed.is_null() {
            None
        } else {
            Some(unsafe { seed.read() })
        };
        let seed = match resolve_seed(cli_seed, spec.seed) {
            Ok(seed) => seed,
            Err(err) => return fail_with(&err),
        };
        let options = RunOptions {
            workers: None,
            keep_records: false,
        };
        let report = match run_experiment(spec, seed, &options) {
            Ok(outcome) => outcome.report,
            Err(err) => return fail_with(&err),
        };
        match serde_json::to_string(&report) {
            Ok(json) => json_out(report_json_out, json),
            Err(err) => fail(TbStatus::RuntimeError, &err.to_string()),
        }
    })
}

/// Closed form of the three-term expectation combination for the
/// configuration given as three 3-vectors (normalized internally).
///
/// # Safety
/// `a`, `b`, `c` must each point to three readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tb_quantum_lhs_16(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    out: *mut f64,
) -> TbStatus {
    guarded(|| {
        let config = match unsafe { read_config(a, b, c) } {
            Ok(config) => config,
            Err(status) => return status,
        };
        match write_out(out, quantum_lhs_16(&config)) {
            Ok(()) => TbStatus::Ok,
            Err(status) => status,
        }
    })
}

/// Closed form of the four-term combination; same contract as
/// [`tb_quantum_lhs_16`].
///
/// # Safety
/// `a`, `b`, `c` must each point to three readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tb_quantum_lhs_18(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    out: *mut f64,
) -> TbStatus {
    guarded(|| {
        let config = match unsafe { read_config(a, b, c) } {
            Ok(config) => config,
            Err(status) => return status,
        };
        match write_out(out, quantum_lhs_18(&config)) {
            Ok(()) => TbStatus::Ok,
            Err(status) => status,
        }
    })
}

/// Exact probability that a run prepared with Bloch vector `bloch`
/// (norm at most 1) yields `first_outcome` then `second_outcome` when the
/// ordered settings are `first_setting`, `second_setting`.
/// `depolarization` shrinks the Bloch vector between the measurements;
/// pass 1 for the noiseless case.
///
/// # Safety
/// `bloch`, `a`, `b`, `c` must each point to three readable doubles;
/// `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tb_exact_pair_prob(
    bloch: *const f64,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    depolarization: f64,
    first_setting: TbSetting,
    first_outcome: TbOutcome,
    second_setting: TbSetting,
    second_outcome: TbOutcome,
    out: *mut f64,
) -> TbStatus {
    guarded(|| {
        let config = match unsafe { read_config(a, b, c) } {
            Ok(config) => config,
            Err(status) => return status,
        };
        let bloch = match unsafe { read_vec3(bloch, "bloch") } {
            Ok(bloch) => bloch,
            Err(status) => return status,
        };
        let state = match QubitState::from_bloch(bloch) {
            Ok(state) => state,
            Err(err) => return fail_with(&err),
        };
        if !(0.0..=1.0).contains(&depolarization) {
            return fail(
                TbStatus::ConfigurationError,
                &format!("depolarization = {depolarization} must lie in [0, 1]"),
            );
        }
        let source = ExactPairProbs {
            state,
            config,
            depolarization,
        };
        let prob = source
            .prob(
                (first_setting.into(), second_setting.into()),
                (first_outcome.into(), second_outcome.into()),
            )
            .expect("exact sources cover every cell");
        match write_out(out, prob) {
            Ok(()) => TbStatus::Ok,
            Err(status) => status,
        }
    })
}
