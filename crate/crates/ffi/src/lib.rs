//! C interface to `dnls-core`.
//!
//! States and ensembles cross the boundary as opaque handles created by
//! `dnls_*_new`/`dnls_sample_*` and released with the matching `*_free`.
//! Every fallible call returns a `DnlsStatus`; on failure a description is
//! available from `dnls_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dnls_core::dynamics::{evolve, RhsKind};
use dnls_core::functionals::energy_report;
use dnls_core::gauge::{gauge_forward, gauge_inverse, gamma_translate};
use dnls_core::measure::{draw_sample, sample_mu, sample_rho, Ensemble};
use dnls_core::spectral::{fl_norm, l2_norm};
use dnls_core::{Error, SpectralState, C64};

/// Opaque Fourier-truncated state.
pub struct DnlsState(SpectralState);

/// Opaque weighted ensemble.
pub struct DnlsEnsemble(Ensemble);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DnlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    BlowUp = 4,
    UnusableEstimate = 5,
    Format = 6,
    Io = 7,
    /// A panic was caught at the boundary.
    Internal = 8,
}

/// Vector field selector for `dnls_evolve`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DnlsRhs {
    Fgdnls = 0,
    GdnlsPlus = 1,
    Dnls = 2,
}

/// Scalar functionals of one state.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DnlsEnergyReport {
    pub mass: f64,
    pub psi: f64,
    pub hamiltonian_h: f64,
    pub energy_e: f64,
    pub gauged_h: f64,
    pub gauged_e: f64,
    pub full_energy: f64,
    pub nonlinear_n: f64,
    pub f_part: f64,
    pub g_part: f64,
    pub k_part: f64,
    pub momentum_re: f64,
    pub momentum_im: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DnlsStatus {
    match e {
        Error::InvalidArgument(_) | Error::BandwidthTooLarge { .. } | Error::Config(_) => DnlsStatus::InvalidArgument,
        Error::NonFinite => DnlsStatus::NonFinite,
        Error::BlowUp { .. } => DnlsStatus::BlowUp,
        Error::UnusableEstimate { .. } => DnlsStatus::UnusableEstimate,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) => DnlsStatus::Format,
        Error::Io(_) => DnlsStatus::Io,
    }
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), (DnlsStatus, String)>) -> DnlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DnlsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DnlsStatus::Internal
        }
    }
}

fn core<T>(r: dnls_core::Result<T>) -> Result<T, (DnlsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (DnlsStatus, String) {
    (DnlsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn state_ref<'a>(p: *const DnlsState) -> Result<&'a SpectralState, (DnlsStatus, String)> {
    p.as_ref().map(|s| &s.0).ok_or_else(|| null("state"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (DnlsStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), (DnlsStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dnls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn dnls_status_name(status: DnlsStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        DnlsStatus::Ok => b"ok\0",
        DnlsStatus::NullPointer => b"null pointer\0",
        DnlsStatus::InvalidArgument => b"invalid argument\0",
        DnlsStatus::NonFinite => b"non-finite value\0",
        DnlsStatus::BlowUp => b"integration blew up\0",
        DnlsStatus::UnusableEstimate => b"unusable estimate\0",
        DnlsStatus::Format => b"format error\0",
        DnlsStatus::Io => b"i/o error\0",
        DnlsStatus::Internal => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// A state from `2·bandwidth + 1` coefficients ordered `n = −N..=N`.
///
/// # Safety
/// `re` and `im` must point to `2·bandwidth + 1` readable doubles and `out`
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_new(
    bandwidth: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut DnlsState,
) -> DnlsStatus {
    guard(|| {
        if re.is_null() || im.is_null() {
            return Err(null("coefficient array"));
        }
        let len = 2 * bandwidth + 1;
        let re = std::slice::from_raw_parts(re, len);
        let im = std::slice::from_raw_parts(im, len);
        let coeffs = re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect();
        let s = core(SpectralState::new(bandwidth, coeffs))?;
        put(out, DnlsState(s))
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_zeros(bandwidth: usize, out: *mut *mut DnlsState) -> DnlsStatus {
    guard(|| put(out, DnlsState(SpectralState::zeros(bandwidth))))
}

/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_clone(state: *const DnlsState, out: *mut *mut DnlsState) -> DnlsStatus {
    guard(|| {
        let s = state_ref(state)?.clone();
        put(out, DnlsState(s))
    })
}

/// Releases a state; null is ignored.
///
/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_free(state: *mut DnlsState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_bandwidth(state: *const DnlsState, out: *mut usize) -> DnlsStatus {
    guard(|| write(out, state_ref(state)?.bandwidth()))
}

/// Copies the coefficients into `re`/`im`, each of length `len = 2N+1`.
///
/// # Safety
/// `state` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dnls_state_coefficients(
    state: *const DnlsState,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> DnlsStatus {
    guard(|| {
        let s = state_ref(state)?;
        if re.is_null() || im.is_null() {
            return Err(null("coefficient array"));
        }
        if len != s.coeffs().len() {
            return Err((
                DnlsStatus::InvalidArgument,
                format!("buffer length {len} differs from 2N+1 = {}", s.coeffs().len()),
            ));
        }
        let (re, im) = (std::slice::from_raw_parts_mut(re, len), std::slice::from_raw_parts_mut(im, len));
        for (i, c) in s.coeffs().iter().enumerate() {
            re[i] = c.re;
            im[i] = c.im;
        }
        Ok(())
    })
}

/// `‖v‖_{FL^{s,r}}`; `r` may be `INFINITY`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_fl_norm(state: *const DnlsState, s: f64, r: f64, out: *mut f64) -> DnlsStatus {
    guard(|| {
        let v = core(fl_norm(state_ref(state)?, s, r))?;
        write(out, v)
    })
}

/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_l2_norm(state: *const DnlsState, out: *mut f64) -> DnlsStatus {
    guard(|| write(out, l2_norm(state_ref(state)?)))
}

/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_energy_report(state: *const DnlsState, out: *mut DnlsEnergyReport) -> DnlsStatus {
    guard(|| {
        let r = energy_report(state_ref(state)?);
        write(
            out,
            DnlsEnergyReport {
                mass: r.m,
                psi: r.psi,
                hamiltonian_h: r.H,
                energy_e: r.E,
                gauged_h: r.gauged_H,
                gauged_e: r.gauged_E,
                full_energy: r.full_E,
                nonlinear_n: r.nonlinear_N,
                f_part: r.F_part,
                g_part: r.G_part,
                k_part: r.K_part,
                momentum_re: r.X_re,
                momentum_im: r.X_im,
            },
        )
    })
}

/// Integrates to `t_final` (negative runs backward) with step at most `dt`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_evolve(
    state: *const DnlsState,
    rhs: DnlsRhs,
    dt: f64,
    t_final: f64,
    out: *mut *mut DnlsState,
) -> DnlsStatus {
    guard(|| {
        let kind = match rhs {
            DnlsRhs::Fgdnls => RhsKind::Fgdnls,
            DnlsRhs::GdnlsPlus => RhsKind::GdnlsPlus,
            DnlsRhs::Dnls => RhsKind::Dnls,
        };
        let s = core(evolve(state_ref(state)?, kind, dt, t_final))?;
        put(out, DnlsState(s))
    })
}

/// `G(u)` truncated to `out_bandwidth`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_gauge_forward(
    state: *const DnlsState,
    out_bandwidth: usize,
    out: *mut *mut DnlsState,
) -> DnlsStatus {
    guard(|| put(out, DnlsState(gauge_forward(state_ref(state)?, out_bandwidth))))
}

/// `G⁻¹(w)` truncated to `out_bandwidth`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_gauge_inverse(
    state: *const DnlsState,
    out_bandwidth: usize,
    out: *mut *mut DnlsState,
) -> DnlsStatus {
    guard(|| put(out, DnlsState(gauge_inverse(state_ref(state)?, out_bandwidth))))
}

/// `Γ(t)w`, translation by `2t·m(w)`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_gamma_translate(state: *const DnlsState, t: f64, out: *mut *mut DnlsState) -> DnlsStatus {
    guard(|| put(out, DnlsState(gamma_translate(state_ref(state)?, t))))
}

/// Sample `index` of the `ρ_N` stream `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_draw_sample(bandwidth: usize, seed: u64, index: u64, out: *mut *mut DnlsState) -> DnlsStatus {
    guard(|| put(out, DnlsState(draw_sample(bandwidth, seed, index))))
}

/// `count` unweighted `ρ_N` samples.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_sample_rho(
    bandwidth: usize,
    count: usize,
    seed: u64,
    out: *mut *mut DnlsEnsemble,
) -> DnlsStatus {
    guard(|| put(out, DnlsEnsemble(core(sample_rho(bandwidth, count, seed))?)))
}

/// `count` weighted `μ_N` samples with cutoff `b`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_sample_mu(
    bandwidth: usize,
    count: usize,
    seed: u64,
    b: f64,
    out: *mut *mut DnlsEnsemble,
) -> DnlsStatus {
    guard(|| {
        if !(b > 0.0) {
            return Err((DnlsStatus::InvalidArgument, format!("cutoff b = {b} must be positive")));
        }
        put(out, DnlsEnsemble(core(sample_mu(bandwidth, count, seed, b))?))
    })
}

/// Releases an ensemble; null is ignored.
///
/// # Safety
/// `ensemble` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnls_ensemble_free(ensemble: *mut DnlsEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

unsafe fn ensemble_ref<'a>(p: *const DnlsEnsemble) -> Result<&'a Ensemble, (DnlsStatus, String)> {
    p.as_ref().map(|e| &e.0).ok_or_else(|| null("ensemble"))
}

/// # Safety
/// `ensemble` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_ensemble_count(ensemble: *const DnlsEnsemble, out: *mut usize) -> DnlsStatus {
    guard(|| write(out, ensemble_ref(ensemble)?.count()))
}

/// # Safety
/// `ensemble` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_ensemble_effective_sample_size(ensemble: *const DnlsEnsemble, out: *mut f64) -> DnlsStatus {
    guard(|| write(out, ensemble_ref(ensemble)?.effective_sample_size()))
}

/// A copy of sample `index` and its log-weight (either output may be null).
///
/// # Safety
/// `ensemble` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnls_ensemble_get(
    ensemble: *const DnlsEnsemble,
    index: usize,
    state_out: *mut *mut DnlsState,
    log_weight_out: *mut f64,
) -> DnlsStatus {
    guard(|| {
        let e = ensemble_ref(ensemble)?;
        if index >= e.count() {
            return Err((DnlsStatus::InvalidArgument, format!("index {index} out of range for {} samples", e.count())));
        }
        if !log_weight_out.is_null() {
            *log_weight_out = e.log_weights[index];
        }
        if !state_out.is_null() {
            *state_out = Box::into_raw(Box::new(DnlsState(e.samples[index].clone())));
        }
        Ok(())
    })
}
