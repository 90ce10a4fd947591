//! C ABI over the `cvqkd` library.
//!
//! States are opaque `CvqkdState` handles owned by the caller and released
//! with `cvqkd_state_free`. Every fallible function returns a
//! `CvqkdStatus`; on failure, `cvqkd_last_error` describes the most recent
//! error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_uint, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cvqkd::analysis::log_negativity;
use cvqkd::fock::{fidelity, purity, Cutoff, Mode, TwoModeState};
use cvqkd::protocol::{bit_error_rate, BerConfig};
use cvqkd::security::{plob_bound, security_report, SecurityOptions};
use cvqkd::states::{add_photons, loss_channel, make_tmsv, ChannelParams, TmsvParams};
use cvqkd::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvqkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Truncation too small for the requested state or operation.
    Truncation = 3,
    /// Not a valid density matrix.
    InvalidState = 4,
    /// Quadrature grid too narrow for the state.
    GridCoverage = 5,
    Io = 6,
    Numerical = 7,
    Panic = 8,
}

/// Mode selector: 0 for A, 1 for B.
pub const CVQKD_MODE_A: c_uint = 0;
pub const CVQKD_MODE_B: c_uint = 1;

/// Opaque two-mode density matrix.
pub struct CvqkdState {
    inner: TwoModeState,
}

/// Key-rate breakdown in bits per channel use.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CvqkdSecurityReport {
    pub i_ab: c_double,
    pub chi_e: c_double,
    pub keyrate: c_double,
    pub gaussian_i_ab: c_double,
    pub gaussian_chi_e: c_double,
    pub gaussian_keyrate: c_double,
    pub success_probability: c_double,
    /// Infinite at unit transmissivity.
    pub plob_bound: c_double,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CvqkdStatus {
    match err {
        Error::InvalidCutoff(_) | Error::InvalidParameter(_) | Error::Config(_) | Error::CutoffMismatch { .. } | Error::DimensionMismatch { .. } => {
            CvqkdStatus::InvalidArgument
        }
        Error::TruncationInadequate { .. } | Error::TruncationOverflow { .. } => CvqkdStatus::Truncation,
        Error::NotHermitian(_) | Error::NotUnitTrace(_) | Error::NotPositive(_) | Error::ZeroWeight => CvqkdStatus::InvalidState,
        Error::GridCoverage(_) => CvqkdStatus::GridCoverage,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::MissingInputs(_) => CvqkdStatus::Io,
        Error::EmptyRecords | Error::Reconstruction(_) => CvqkdStatus::Numerical,
    }
}

struct Failure(CvqkdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CvqkdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CvqkdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvqkdStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CvqkdStatus::Panic
        }
    }
}

unsafe fn state_ref<'a>(state: *const CvqkdState) -> Result<&'a TwoModeState, Failure> {
    state.as_ref().map(|s| &s.inner).ok_or_else(|| null("state"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_state(out: *mut *mut CvqkdState, state: TwoModeState) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    out.write(Box::into_raw(Box::new(CvqkdState { inner: state })));
    Ok(())
}

fn mode(m: c_uint) -> Result<Mode, Failure> {
    match m {
        CVQKD_MODE_A => Ok(Mode::A),
        CVQKD_MODE_B => Ok(Mode::B),
        other => Err(Failure(CvqkdStatus::InvalidArgument, format!("mode must be 0 (A) or 1 (B), got {other}"))),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|e| Failure(CvqkdStatus::InvalidArgument, format!("path is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvqkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cvqkd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the thread's last error message.
#[no_mangle]
pub extern "C" fn cvqkd_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Two-mode squeezed vacuum `Σ λⁿ|n,n⟩`, truncated at `n_max` and
/// renormalized.
///
/// # Safety
/// `out` must be valid for writing one handle.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_tmsv(lambda: c_double, n_max: c_uint, out: *mut *mut CvqkdState) -> CvqkdStatus {
    guard(|| {
        let st = make_tmsv(TmsvParams::new(lambda)?, Cutoff::new(n_max as usize)?)?;
        write_state(out, st)
    })
}

/// Two-mode vacuum.
///
/// # Safety
/// `out` must be valid for writing one handle.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_vacuum(n_max: c_uint, out: *mut *mut CvqkdState) -> CvqkdStatus {
    guard(|| write_state(out, TwoModeState::vacuum(Cutoff::new(n_max as usize)?)))
}

/// Reads a state from a JSON file written by `cvqkd_state_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_load(path: *const c_char, out: *mut *mut CvqkdState) -> CvqkdStatus {
    guard(|| {
        let p = path_arg(path)?;
        write_state(out, TwoModeState::load(&p)?)
    })
}

/// Writes a state as JSON.
///
/// # Safety
/// `state` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_save(state: *const CvqkdState, path: *const c_char) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?;
        st.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `state` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_free(state: *mut CvqkdState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Deep copy.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_clone(state: *const CvqkdState, out: *mut *mut CvqkdState) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?.clone();
        write_state(out, st)
    })
}

/// Fock cutoff `n_max` of the state.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_cutoff(state: *const CvqkdState, out: *mut c_uint) -> CvqkdStatus {
    guard(|| {
        let n = state_ref(state)?.cutoff().n_max();
        write_out(out, n as c_uint)
    })
}

/// Copies the density matrix into `re` and `im`, row-major, each of length
/// `len = ((n_max + 1)²)²`. The joint index of `|r⟩_A|s⟩_B` is
/// `(n_max + 1) r + s`.
///
/// # Safety
/// `re` and `im` must be valid for writing `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_state_density(state: *const CvqkdState, re: *mut c_double, im: *mut c_double, len: usize) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?;
        if re.is_null() || im.is_null() {
            return Err(null("output buffer"));
        }
        let m = st.matrix();
        let n = m.nrows();
        if len != n * n {
            return Err(Failure(CvqkdStatus::InvalidArgument, format!("buffer length {len}, need {}", n * n)));
        }
        let re = std::slice::from_raw_parts_mut(re, len);
        let im = std::slice::from_raw_parts_mut(im, len);
        for i in 0..n {
            for j in 0..n {
                re[i * n + j] = m[(i, j)].re;
                im[i * n + j] = m[(i, j)].im;
            }
        }
        Ok(())
    })
}

/// Applies `(a†)^k` to `mode` and renormalizes. `weight` (may be NULL)
/// receives the pre-normalization trace.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_add_photons(
    state: *const CvqkdState,
    mode_sel: c_uint,
    k: c_uint,
    out: *mut *mut CvqkdState,
    weight: *mut c_double,
) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?;
        let (next, w) = add_photons(st, mode(mode_sel)?, k as usize)?;
        if !weight.is_null() {
            weight.write(w);
        }
        write_state(out, next)
    })
}

/// Pure-loss channel of transmissivity `t` on `mode`.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_loss_channel(state: *const CvqkdState, mode_sel: c_uint, t: c_double, out: *mut *mut CvqkdState) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?;
        let next = loss_channel(st, mode(mode_sel)?, ChannelParams::pure_loss(t)?)?;
        write_state(out, next)
    })
}

/// `log₂ ‖ρ^Γ‖₁`.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_log_negativity(state: *const CvqkdState, out: *mut c_double) -> CvqkdStatus {
    guard(|| {
        let v = log_negativity(state_ref(state)?);
        write_out(out, v)
    })
}

/// `Tr ρ²`.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_purity(state: *const CvqkdState, out: *mut c_double) -> CvqkdStatus {
    guard(|| {
        let v = purity(state_ref(state)?.matrix());
        write_out(out, v)
    })
}

/// Squared Uhlmann fidelity of two states with equal cutoffs.
///
/// # Safety
/// Both handles must be live; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_fidelity(a: *const CvqkdState, b: *const CvqkdState, out: *mut c_double) -> CvqkdStatus {
    guard(|| {
        let (a, b) = (state_ref(a)?, state_ref(b)?);
        if a.cutoff() != b.cutoff() {
            return Err(Failure(CvqkdStatus::InvalidArgument, format!("cutoffs differ: {} vs {}", a.cutoff().n_max(), b.cutoff().n_max())));
        }
        let f = fidelity(a.matrix(), b.matrix())?;
        write_out(out, f)
    })
}

/// Reverse-reconciliation key rates with amplitude-quadrature homodyne
/// detection on both modes and the default quadrature grid. `t` is the
/// channel transmissivity used for the PLOB bound.
///
/// # Safety
/// `state` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_security_report(
    state: *const CvqkdState,
    t: c_double,
    success_probability: c_double,
    out: *mut CvqkdSecurityReport,
) -> CvqkdStatus {
    guard(|| {
        let r = security_report(state_ref(state)?, t, success_probability, &SecurityOptions::default())?;
        write_out(
            out,
            CvqkdSecurityReport {
                i_ab: r.i_ab,
                chi_e: r.chi_e,
                keyrate: r.keyrate,
                gaussian_i_ab: r.gaussian_i_ab,
                gaussian_chi_e: r.gaussian_chi_e,
                gaussian_keyrate: r.gaussian_keyrate,
                success_probability: r.success_probability,
                plob_bound: r.plob_bound,
            },
        )
    })
}

/// `-log₂(1 - t)`; infinite at `t = 1`.
#[no_mangle]
pub extern "C" fn cvqkd_plob_bound(t: c_double) -> c_double {
    plob_bound(t)
}

/// Monte Carlo bit error rate of sign encoding with MAP decoding.
///
/// # Safety
/// `state` must be a live handle; `ber` must be valid for writing; `stderr`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cvqkd_bit_error_rate(
    state: *const CvqkdState,
    theta: c_double,
    n_samples: usize,
    seed: u64,
    ber: *mut c_double,
    stderr: *mut c_double,
) -> CvqkdStatus {
    guard(|| {
        let st = state_ref(state)?;
        let config = BerConfig { n_samples, rng_seed: seed, ..BerConfig::default() };
        let est = bit_error_rate(st, theta, &config)?;
        if !stderr.is_null() {
            stderr.write(est.stderr);
        }
        write_out(ber, est.ber)
    })
}
