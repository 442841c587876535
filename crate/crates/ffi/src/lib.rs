//! C interface to `quadflow`.
//!
//! Conventions:
//! - every fallible function returns a [`QfStatus`]; on failure the message
//!   is available from [`qf_last_error`] on the same thread;
//! - systems and results are opaque handles released with their `_free`
//!   function (passing NULL is a no-op);
//! - reals cross the boundary as decimal strings, parsed at the system's
//!   mantissa width; strings returned through `char **` are owned by the
//!   caller and released with [`qf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use quadflow::integrator::{integrate_summary, ArcSummary, IntegrationConfig, Way};
use quadflow::lyapunov::{lyapunov_spectrum, BenettinConfig, Spectrum};
use quadflow::qsystem::{bundled, QuadSystem};
use quadflow::recurrence::{return_statistics, scan_trajectory, RecurrenceScanConfig};
use quadflow::{Error, PrecisionContext, Real};

/// Result of every fallible call. Values 1–5 match the command-line exit
/// codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfStatus {
    Ok = 0,
    Io = 1,
    InvalidArgument = 2,
    BallEscape = 3,
    Truncation = 4,
    Degeneracy = 5,
    NullPointer = 6,
    Panic = 7,
}

/// A quadratic system at a fixed precision.
pub struct QfSystem {
    sys: QuadSystem,
}

/// Endpoint and step statistics of one integration.
pub struct QfArc {
    summary: ArcSummary,
}

/// A computed Lyapunov spectrum.
pub struct QfSpectrum {
    spectrum: Spectrum,
}

/// Integer step statistics of an arc (1-based step indices).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QfArcStats {
    /// Number of steps N.
    pub steps: usize,
    /// Largest local polynomial degree.
    pub n_max: usize,
    /// First step attaining `n_max`.
    pub l_max: usize,
    /// First step attaining the largest |dt|.
    pub d_max: usize,
    /// Non-zero when the trajectory left the trapping ball.
    pub escaped: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QfStatus {
    match e.exit_code() {
        1 => QfStatus::Io,
        3 => QfStatus::BallEscape,
        4 => QfStatus::Truncation,
        5 => QfStatus::Degeneracy,
        _ => QfStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard<F>(f: F) -> QfStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            QfStatus::Panic
        }
    }
}

struct Failure(QfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QfStatus::NullPointer, format!("{what} is NULL"))
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// # Safety
/// `h` must be NULL or a pointer obtained from this library and not freed.
unsafe fn deref<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` must be NULL or valid for a pointer write.
unsafe fn give<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `out` must be NULL or valid for a pointer write.
unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|_| Failure(QfStatus::Panic, "interior NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn csv(values: &[Real]) -> String {
    values.iter().map(Real::to_decimal).collect::<Vec<_>>().join(",")
}

fn parse(ctx: PrecisionContext, what: &str, text: &str) -> Result<Real, Failure> {
    ctx.parse(text)
        .map_err(|e| Failure(QfStatus::InvalidArgument, format!("{what}: {e}")))
}

fn state(sys: &QuadSystem, text: &str) -> Result<Vec<Real>, Failure> {
    let x = sys
        .context()
        .parse_vector(text)
        .map_err(|e| Failure(QfStatus::InvalidArgument, format!("x0: {e}")))?;
    if x.len() != sys.dim() {
        return Err(Failure(
            QfStatus::InvalidArgument,
            format!("x0 has {} components, the system has {}", x.len(), sys.dim()),
        ));
    }
    Ok(x)
}

fn config(sys: &QuadSystem, horizon: &str, eps_pw: &str) -> Result<IntegrationConfig, Failure> {
    let ctx = sys.context();
    let cfg = IntegrationConfig::new(ctx, parse(ctx, "horizon", horizon)?, parse(ctx, "eps_pw", eps_pw)?);
    cfg.validate()?;
    Ok(cfg)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a system-definition JSON document at `bits` of mantissa.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_system_from_json(json: *const c_char, bits: u32, out: *mut *mut QfSystem) -> QfStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let ctx = PrecisionContext::new(bits)?;
        let sys = QuadSystem::from_json_str(text, "<json>", ctx)?;
        give(out, QfSystem { sys })
    })
}

/// Loads a system from a file path, or a bundled name such as
/// `"dong2019.json"`.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_system_load(source: *const c_char, bits: u32, out: *mut *mut QfSystem) -> QfStatus {
    guard(|| {
        let name = read_str(source, "source")?;
        let ctx = PrecisionContext::new(bits)?;
        let path = std::path::Path::new(name);
        let sys = if path.is_file() {
            quadflow::qsystem::load_system(path, ctx)?
        } else if let Some(text) = bundled::lookup(name) {
            QuadSystem::from_json_str(text, name, ctx)?
        } else {
            return Err(Failure(QfStatus::Io, format!("{name}: no such file or bundled system")));
        };
        give(out, QfSystem { sys })
    })
}

/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_system_free(sys: *mut QfSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Dimension `n`, or 0 for NULL.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_system_dim(sys: *const QfSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.sys.dim())
}

/// Mantissa width in bits, or 0 for NULL.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_system_bits(sys: *const QfSystem) -> u32 {
    sys.as_ref().map_or(0, |s| s.sys.context().mantissa_bits())
}

/// Integrates from `x0` (comma-separated decimals) over `[0, way*horizon]`
/// with series tolerance `eps_pw`; `way` is +1 or -1. A ball escape still
/// yields an arc (check `escaped` in [`qf_arc_stats`]) and returns
/// [`QfStatus::BallEscape`].
///
/// # Safety
/// String arguments must be NUL-terminated; `sys` a live handle; `out`
/// valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_integrate(
    sys: *const QfSystem,
    x0: *const c_char,
    horizon: *const c_char,
    eps_pw: *const c_char,
    way: i32,
    out: *mut *mut QfArc,
) -> QfStatus {
    guard(|| {
        let sys = &deref(sys, "system")?.sys;
        let x = state(sys, read_str(x0, "x0")?)?;
        let cfg = config(sys, read_str(horizon, "horizon")?, read_str(eps_pw, "eps_pw")?)?
            .with_way(Way::from_sign(way)?);
        let summary = integrate_summary(sys, &x, &cfg)?;
        let escape = summary.escape.as_ref().map(|e| e.to_error());
        give(out, QfArc { summary })?;
        match escape {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// # Safety
/// `arc` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_arc_free(arc: *mut QfArc) {
    if !arc.is_null() {
        drop(Box::from_raw(arc));
    }
}

/// Final state as comma-separated decimals.
///
/// # Safety
/// `arc` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_arc_final_state(arc: *const QfArc, out: *mut *mut c_char) -> QfStatus {
    guard(|| give_string(out, csv(&deref(arc, "arc")?.summary.final_state)))
}

/// Signed time reached (equal to `way*horizon` unless the ball was left).
///
/// # Safety
/// `arc` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_arc_final_time(arc: *const QfArc, out: *mut *mut c_char) -> QfStatus {
    guard(|| give_string(out, deref(arc, "arc")?.summary.final_time.to_decimal()))
}

/// # Safety
/// `arc` must be a live handle; `out` valid for a struct write.
#[no_mangle]
pub unsafe extern "C" fn qf_arc_stats(arc: *const QfArc, out: *mut QfArcStats) -> QfStatus {
    guard(|| {
        let s = &deref(arc, "arc")?.summary;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = QfArcStats {
            steps: s.stats.steps,
            n_max: s.stats.n_max,
            l_max: s.stats.l_max,
            d_max: s.stats.d_max,
            escaped: s.escape.is_some() as i32,
        };
        Ok(())
    })
}

/// Lyapunov spectrum from `x0` over `horizon` in `macro_steps` steps.
///
/// # Safety
/// String arguments must be NUL-terminated; `sys` a live handle; `out`
/// valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_lyapunov(
    sys: *const QfSystem,
    x0: *const c_char,
    horizon: *const c_char,
    macro_steps: usize,
    seed: u64,
    eps_pw: *const c_char,
    out: *mut *mut QfSpectrum,
) -> QfStatus {
    guard(|| {
        let sys = &deref(sys, "system")?.sys;
        let x = state(sys, read_str(x0, "x0")?)?;
        let ctx = sys.context();
        let cfg = config(sys, "0", read_str(eps_pw, "eps_pw")?)?;
        let t = parse(ctx, "horizon", read_str(horizon, "horizon")?)?;
        let bcfg = BenettinConfig::new(cfg, t, macro_steps, seed);
        let spectrum = lyapunov_spectrum(sys, &x, &bcfg)?;
        give(out, QfSpectrum { spectrum })
    })
}

/// # Safety
/// `spec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_spectrum_free(spec: *mut QfSpectrum) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Exponents in production order, comma-separated; `sorted != 0` gives
/// them in decreasing order instead.
///
/// # Safety
/// `spec` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_spectrum_exponents(spec: *const QfSpectrum, sorted: i32, out: *mut *mut c_char) -> QfStatus {
    guard(|| {
        let s = &deref(spec, "spectrum")?.spectrum;
        let v = if sorted != 0 { s.sorted() } else { s.exponents.clone() };
        give_string(out, csv(&v))
    })
}

/// Sum of the exponents.
///
/// # Safety
/// `spec` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_spectrum_sum(spec: *const QfSpectrum, out: *mut *mut c_char) -> QfStatus {
    guard(|| give_string(out, deref(spec, "spectrum")?.spectrum.sum().to_decimal()))
}

/// Recurrence scan from `x0` on the grid `k*dt_p`, `t <= t_p`. Writes the
/// event count to `count` and, if `period` is not NULL, the period estimate
/// (an empty string when the returns are irregular or too few).
///
/// # Safety
/// String arguments must be NUL-terminated; `sys` a live handle; `count`
/// valid for a write; `period` NULL or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn qf_recurrences(
    sys: *const QfSystem,
    x0: *const c_char,
    dt_p: *const c_char,
    t_p: *const c_char,
    threshold: *const c_char,
    eps_pw: *const c_char,
    count: *mut usize,
    period: *mut *mut c_char,
) -> QfStatus {
    guard(|| {
        let sys = &deref(sys, "system")?.sys;
        let ctx = sys.context();
        let x = state(sys, read_str(x0, "x0")?)?;
        let cfg = config(sys, "0", read_str(eps_pw, "eps_pw")?)?;
        let scan = RecurrenceScanConfig::new(
            parse(ctx, "dt_p", read_str(dt_p, "dt_p")?)?,
            parse(ctx, "t_p", read_str(t_p, "t_p")?)?,
        )
        .with_threshold(parse(ctx, "threshold", read_str(threshold, "threshold")?)?);
        if count.is_null() {
            return Err(null("count"));
        }
        let stats = return_statistics(scan_trajectory(sys, &x, &cfg, &scan)?);
        *count = stats.events.len();
        if !period.is_null() {
            give_string(
                period,
                stats.period_estimate.as_ref().map(Real::to_decimal).unwrap_or_default(),
            )?;
        }
        Ok(())
    })
}
