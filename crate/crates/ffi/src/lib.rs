//! C interface to `hdffm`.
//!
//! Objects are exposed as opaque handles created by `hdffm_*` constructors
//! and released with the matching `*_free` function. Every fallible call
//! returns an [`HdffmStatus`]; on failure a message is available from
//! [`hdffm_last_error`] on the same thread until the next failing call.
//! Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hdffm::estimate::{common_component, fit_factors, goodness_of_fit};
use hdffm::io::{read_panel, PanelFile};
use hdffm::simulate::{gen_dgp, DgpConfig};
use hdffm::{abc_select_r, select_r_fixed, AbcConfig, Error, FactorFit, Panel, PenaltyKind};
use nalgebra::DMatrix;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdffmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid argument or malformed input.
    Invalid = 2,
    /// Numerical failure such as rank deficiency.
    Numerical = 3,
    Io = 4,
    /// Caller buffer too small.
    BufferTooSmall = 5,
    /// Unexpected internal failure.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdffmPenalty {
    Ic1a = 0,
    Ic2a = 1,
}

impl From<HdffmPenalty> for PenaltyKind {
    fn from(p: HdffmPenalty) -> Self {
        match p {
            HdffmPenalty::Ic1a => PenaltyKind::Ic1a,
            HdffmPenalty::Ic2a => PenaltyKind::Ic2a,
        }
    }
}

/// Opaque panel handle.
pub struct HdffmPanel {
    inner: Panel,
}

/// Opaque factor-fit handle.
pub struct HdffmFit {
    inner: FactorFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HdffmStatus {
    match e.exit_code() {
        3 => HdffmStatus::Numerical,
        4 => HdffmStatus::Io,
        _ => HdffmStatus::Invalid,
    }
}

struct Failure(HdffmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HdffmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HdffmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdffmStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            HdffmStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HdffmStatus::Invalid, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn panel_ref<'a>(p: *const HdffmPanel) -> Result<&'a Panel, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("panel"))
}

unsafe fn fit_ref<'a>(p: *const HdffmFit) -> Result<&'a FactorFit, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("fit"))
}

fn boxed_panel(p: Panel) -> *mut HdffmPanel {
    Box::into_raw(Box::new(HdffmPanel { inner: p }))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if src.len() > len {
        return Err(Failure(HdffmStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn hdffm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hdffm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an all-scalar panel from a row-major `n × t` array.
///
/// # Safety
/// `values` must point to `n * t` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_from_scalar(
    values: *const f64,
    n: usize,
    t: usize,
    out: *mut *mut HdffmPanel,
) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let len = n.checked_mul(t).ok_or_else(|| Failure(HdffmStatus::Invalid, "n * t overflows".into()))?;
        let slice = std::slice::from_raw_parts(values, len);
        let m = DMatrix::from_row_slice(n, t, slice);
        *out = boxed_panel(Panel::scalar(&m)?);
        Ok(())
    })
}

/// Parses a panel from its JSON representation.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_from_json(json: *const c_char, out: *mut *mut HdffmPanel) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        let file: PanelFile = serde_json::from_str(text).map_err(Error::from)?;
        *out = boxed_panel(file.to_panel()?);
        Ok(())
    })
}

/// Reads a panel file (JSON, or scalar CSV when the name ends in `.csv`).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_read(path: *const c_char, out: *mut *mut HdffmPanel) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = str_arg(path, "path")?;
        *out = boxed_panel(read_panel(Path::new(p))?);
        Ok(())
    })
}

/// Serializes a panel to JSON. Release the string with [`hdffm_string_free`].
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_to_json(panel: *const HdffmPanel, out: *mut *mut c_char) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = panel_ref(panel)?;
        let text = serde_json::to_string(&PanelFile::from_panel(p, None)).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `panel` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_free(panel: *mut HdffmPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Number of series `N` (0 for a null handle).
///
/// # Safety
/// `panel` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_n(panel: *const HdffmPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n())
}

/// Number of time points `T` (0 for a null handle).
///
/// # Safety
/// `panel` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_t(panel: *const HdffmPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.t())
}

/// `⟨x_s, x_t⟩` summed over series, 0-based time indices.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_panel_inner_product(
    panel: *const HdffmPanel,
    s: usize,
    t: usize,
    out: *mut f64,
) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = panel_ref(panel)?.inner_product(s, t)?;
        Ok(())
    })
}

/// Draws a simulated panel with default design settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_simulate(
    dgp: u8,
    n: usize,
    t: usize,
    seed: u64,
    out: *mut *mut HdffmPanel,
) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = DgpConfig { dgp, n, t, seed, ..DgpConfig::default() };
        *out = boxed_panel(gen_dgp(&cfg)?.0);
        Ok(())
    })
}

/// Fits `k` factors.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_factors(panel: *const HdffmPanel, k: usize, out: *mut *mut HdffmFit) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let fit = fit_factors(panel_ref(panel)?, k)?;
        *out = Box::into_raw(Box::new(HdffmFit { inner: fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_free(fit: *mut HdffmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of fitted factors (0 for a null handle).
///
/// # Safety
/// `fit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_k(fit: *const HdffmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.k)
}

/// Copies the `k` values `λ̂` into `buf`.
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_lambda_hat(fit: *const HdffmFit, buf: *mut f64, len: usize) -> HdffmStatus {
    guard(|| copy_out(&fit_ref(fit)?.lambda_hat, buf, len))
}

/// Copies the `k × T` factor matrix (row-major) into `buf`.
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_factor_matrix(fit: *const HdffmFit, buf: *mut f64, len: usize) -> HdffmStatus {
    guard(|| copy_out(&row_major(&fit_ref(fit)?.factors), buf, len))
}

/// Estimated common component as a new panel.
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_fit_common_component(fit: *const HdffmFit, out: *mut *mut HdffmPanel) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed_panel(common_component(fit_ref(fit)?));
        Ok(())
    })
}

/// `V(k)`.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_goodness_of_fit(panel: *const HdffmPanel, k: usize, out: *mut f64) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = goodness_of_fit(panel_ref(panel)?, k)?;
        Ok(())
    })
}

/// Number of factors minimizing the criterion for a fixed tuning constant `c`.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_select_r_fixed(
    panel: *const HdffmPanel,
    c: f64,
    penalty: HdffmPenalty,
    k_max: usize,
    out: *mut usize,
) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = select_r_fixed(panel_ref(panel)?, c, penalty.into(), k_max)?;
        Ok(())
    })
}

/// Number of factors with the tuning constant chosen by the permutation
/// procedure in its reference configuration.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdffm_abc_select_r(
    panel: *const HdffmPanel,
    penalty: HdffmPenalty,
    k_max: usize,
    seed: u64,
    out: *mut usize,
) -> HdffmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = panel_ref(panel)?;
        let cfg = AbcConfig { k_max, ..AbcConfig::reference(p.n(), p.t(), seed) };
        *out = abc_select_r(p, &cfg, penalty.into())?.0;
        Ok(())
    })
}
