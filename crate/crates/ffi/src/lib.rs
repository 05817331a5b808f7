//! C ABI over `chordsynth`.
//!
//! Systems and synthesis results are opaque heap handles released with their
//! `*_free` function. Every fallible call returns a [`CsStatus`]; the message
//! of the most recent failure on the calling thread is available through
//! [`cs_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use chordsynth::admm::{self, AdmmOptions};
use chordsynth::graph::ChordalStructure;
use chordsynth::netsim;
use chordsynth::stabilizability::{self, DEFAULT_ACTUATION_MARGIN};
use chordsynth::synth::{self, SynthesisResult, SynthesisStatus};
use chordsynth::system::{closed_loop, controller_from_json, load_system, system_from_json};
use chordsynth::{linalg, Error, InterconnectedSystem};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Dimension = 4,
    Domain = 5,
    Numerical = 6,
    Io = 7,
    OutOfRange = 8,
    /// The requested quantity is absent, e.g. the H2 norm of a failed synthesis.
    NoValue = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsMethod {
    Centralized = 0,
    Admm = 1,
    Distributed = 2,
    LocalizedLqr = 3,
    TruncatedLqr = 4,
    FullyActuated = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsSynthesisStatus {
    Success = 0,
    Infeasible = 1,
    NumericalLimit = 2,
    Destabilizing = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsAdmmOptions {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: size_t,
    pub parallel: bool,
}

/// Opaque interconnected system.
pub struct CsSystem {
    inner: InterconnectedSystem,
}

/// Opaque synthesis outcome.
pub struct CsResult {
    inner: SynthesisResult,
    iterations: Option<usize>,
    audit_pass: Option<bool>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Validation { .. } | Error::Json(_) => CsStatus::Validation,
        Error::Dimension(_) => CsStatus::Dimension,
        Error::Domain(_) | Error::Infeasible(_) => CsStatus::Domain,
        Error::Numerical(_) | Error::NoUniqueSolution(_) | Error::NumericalLimit(_) => CsStatus::Numerical,
        Error::Io(_) => CsStatus::Io,
    }
}

struct Fail(CsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(CsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(CsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    let mut bytes = s.into_bytes();
    bytes.retain(|&b| b != 0);
    CString::new(bytes).expect("nul bytes removed").into_raw()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or 0
/// when no error has been recorded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error_message(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub extern "C" fn cs_admm_options_default() -> CsAdmmOptions {
    let d = AdmmOptions::default();
    CsAdmmOptions {
        rho: d.rho,
        tol: d.tol,
        max_iter: d.max_iter,
        parallel: d.parallel,
    }
}

/// Parses a system from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_system_from_json(json: *const c_char, out: *mut *mut CsSystem) -> CsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let sys = system_from_json(text(json, "json")?)?;
        *out = Box::into_raw(Box::new(CsSystem { inner: sys }));
        Ok(())
    })
}

/// Loads a system from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_system_load(path: *const c_char, out: *mut *mut CsSystem) -> CsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let sys = load_system(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(CsSystem { inner: sys }));
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_system_free(sys: *mut CsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of subsystems.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_system_subsystem_count(sys: *const CsSystem, out: *mut size_t) -> CsStatus {
    guard(|| {
        let s = deref(sys, "sys")?;
        *out_ptr(out, "out")? = s.inner.len();
        Ok(())
    })
}

/// Writes 1 to `out` when the system is certified strongly decentralized
/// stabilizable, 0 otherwise.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_classify_sigma2(sys: *const CsSystem, out: *mut bool) -> CsStatus {
    guard(|| {
        let s = deref(sys, "sys")?;
        let out = out_ptr(out, "out")?;
        *out = stabilizability::classify(&s.inner)?.sigma2();
        Ok(())
    })
}

/// Runs one synthesis method. `opts` may be null for the defaults; it is
/// ignored by the non-iterative methods. A returned result can still carry a
/// non-success [`CsSynthesisStatus`].
///
/// # Safety
/// `sys` must be a live handle, `opts` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_synthesize(
    sys: *const CsSystem,
    method: CsMethod,
    opts: *const CsAdmmOptions,
    out: *mut *mut CsResult,
) -> CsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let sys = &deref(sys, "sys")?.inner;
        let o = opts.as_ref().copied().unwrap_or_else(|| cs_admm_options_default());
        let opts = AdmmOptions {
            rho: o.rho,
            tol: o.tol,
            max_iter: o.max_iter,
            parallel: o.parallel,
        };
        let st = || ChordalStructure::from_graph(&sys.undirected_graph());
        let mut iterations = None;
        let mut audit_pass = None;
        let inner = match method {
            CsMethod::Centralized => synth::solve_restriction(sys)?,
            CsMethod::LocalizedLqr => synth::localized_lqr(sys)?,
            CsMethod::TruncatedLqr => synth::truncated_lqr(sys)?,
            CsMethod::FullyActuated => stabilizability::fully_actuated_synthesis(sys, DEFAULT_ACTUATION_MARGIN)?,
            CsMethod::Admm => {
                let run = admm::run(sys, &st(), &opts)?;
                iterations = Some(run.state.iteration);
                run.synthesis
            }
            CsMethod::Distributed => {
                let s = st();
                let layout = admm::build_layout(sys, &s)?;
                let (res, run) = netsim::synthesize_distributed(sys, &s, &opts)?;
                iterations = Some(run.iterations);
                audit_pass = Some(netsim::audit_privacy(&run.transcript.entries(false), &layout).pass);
                res
            }
        };
        *out = Box::into_raw(Box::new(CsResult {
            inner,
            iterations,
            audit_pass,
        }));
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_result_free(res: *mut CsResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_status(res: *const CsResult, out: *mut CsSynthesisStatus) -> CsStatus {
    guard(|| {
        let r = deref(res, "res")?;
        *out_ptr(out, "out")? = match r.inner.status {
            SynthesisStatus::Success => CsSynthesisStatus::Success,
            SynthesisStatus::Infeasible => CsSynthesisStatus::Infeasible,
            SynthesisStatus::NumericalLimit => CsSynthesisStatus::NumericalLimit,
            SynthesisStatus::Destabilizing => CsSynthesisStatus::Destabilizing,
        };
        Ok(())
    })
}

/// Closed-loop H2 norm; [`CsStatus::NoValue`] when none was computed.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_h2(res: *const CsResult, out: *mut f64) -> CsStatus {
    guard(|| {
        let r = deref(res, "res")?;
        let out = out_ptr(out, "out")?;
        *out = r
            .inner
            .h2
            .ok_or_else(|| Fail(CsStatus::NoValue, "no H2 value".into()))?;
        Ok(())
    })
}

/// ADMM iteration count; [`CsStatus::NoValue`] for non-iterative methods.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_iterations(res: *const CsResult, out: *mut size_t) -> CsStatus {
    guard(|| {
        let r = deref(res, "res")?;
        let out = out_ptr(out, "out")?;
        *out = r
            .iterations
            .ok_or_else(|| Fail(CsStatus::NoValue, "method is not iterative".into()))?;
        Ok(())
    })
}

/// Privacy audit outcome of a distributed run; [`CsStatus::NoValue`] otherwise.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_audit_pass(res: *const CsResult, out: *mut bool) -> CsStatus {
    guard(|| {
        let r = deref(res, "res")?;
        let out = out_ptr(out, "out")?;
        *out = r
            .audit_pass
            .ok_or_else(|| Fail(CsStatus::NoValue, "no transcript was audited".into()))?;
        Ok(())
    })
}

fn gain_block(r: &CsResult, i: size_t) -> Result<&linalg::Mat, Fail> {
    let k = r
        .inner
        .controller
        .as_ref()
        .ok_or_else(|| Fail(CsStatus::NoValue, "result has no controller".into()))?;
    k.gains
        .get(i)
        .ok_or_else(|| Fail(CsStatus::OutOfRange, format!("gain block {i} out of range")))
}

/// Shape of the 0-based gain block `K_ii`.
///
/// # Safety
/// `res` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_gain_shape(
    res: *const CsResult,
    i: size_t,
    rows: *mut size_t,
    cols: *mut size_t,
) -> CsStatus {
    guard(|| {
        let k = gain_block(deref(res, "res")?, i)?;
        let rows = out_ptr(rows, "rows")?;
        let cols = out_ptr(cols, "cols")?;
        *rows = k.nrows();
        *cols = k.ncols();
        Ok(())
    })
}

/// Copies gain block `i` row-major into `buf` of `len` doubles.
///
/// # Safety
/// `res` must be a live handle; `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_result_gain(res: *const CsResult, i: size_t, buf: *mut f64, len: size_t) -> CsStatus {
    guard(|| {
        let k = gain_block(deref(res, "res")?, i)?;
        if buf.is_null() {
            return Err(Fail(CsStatus::NullPointer, "buf is null".into()));
        }
        let need = k.nrows() * k.ncols();
        if len < need {
            return Err(Fail(CsStatus::BufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                dst[r * k.ncols() + c] = k[(r, c)];
            }
        }
        Ok(())
    })
}

/// Result as JSON text, released with [`cs_string_free`].
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_result_to_json(res: *const CsResult, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let r = deref(res, "res")?;
        let out = out_ptr(out, "out")?;
        let mut v = r.inner.to_json();
        if let Some(m) = v.as_object_mut() {
            m.insert("iterations".into(), r.iterations.into());
            if let Some(p) = r.audit_pass {
                m.insert("audit_pass".into(), p.into());
            }
        }
        *out = into_c_string(v.to_string());
        Ok(())
    })
}

/// Checks a gain file (`{"gains": [...]}`) against `sys`: writes whether the
/// closed loop is Hurwitz and its H2 norm (NaN when unstable).
///
/// # Safety
/// `sys` must be a live handle, `gains_json` NUL-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cs_check_gains(
    sys: *const CsSystem,
    gains_json: *const c_char,
    hurwitz: *mut bool,
    h2: *mut f64,
) -> CsStatus {
    guard(|| {
        let sys = &deref(sys, "sys")?.inner;
        let k = controller_from_json(text(gains_json, "gains_json")?)?;
        let hurwitz = out_ptr(hurwitz, "hurwitz")?;
        let h2 = out_ptr(h2, "h2")?;
        k.check_dims(sys.partition())?;
        *hurwitz = linalg::is_hurwitz(&closed_loop(sys, &k)?);
        *h2 = if *hurwitz { synth::h2_norm(sys, &k)? } else { f64::NAN };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
