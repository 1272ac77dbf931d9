//! C ABI over the GP, Cox and classifier models.
//!
//! Every fallible call returns an [`AdprogStatus`]. On failure the message is
//! kept per thread and can be copied out with [`adprog_last_error_message`].
//! Models are opaque handles released with their `*_free` function.
//! Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use adprog::classify::{svm_predict, svm_train, LinearClassifier, SvmOptions};
use adprog::eval::classification_metrics;
use adprog::gp::{
    default_hyper, gp_fit, optimize_hyperparameters, GpHyper, KernelSpec, OptimizeOptions, TrainedGp,
};
use adprog::survival::{conversion_probabilities, cox_fit, CoxModel, CoxOptions, SurvivalRecord, Ties};
use adprog::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdprogStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    Numerical = 5,
    MonotoneLikelihood = 6,
    NoEvents = 7,
    SingleClass = 8,
    Panic = 9,
    Other = 10,
}

/// Trained exact GP with an isotropic RBF kernel.
pub struct AdprogGp {
    inner: TrainedGp<KernelSpec>,
}

/// Fitted Cox proportional-hazards model.
pub struct AdprogCox {
    inner: CoxModel,
}

/// Trained linear margin classifier.
pub struct AdprogSvm {
    inner: LinearClassifier,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdprogMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Nonzero when the matching rate has a zero denominator (reported as 0).
    pub precision_undefined: u8,
    pub recall_undefined: u8,
    pub f1_undefined: u8,
    pub accuracy_undefined: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AdprogStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => AdprogStatus::InvalidArgument,
        Error::Dimension { .. } => AdprogStatus::DimensionMismatch,
        Error::NotPositiveDefinite => AdprogStatus::NotPositiveDefinite,
        Error::Numerical(_) => AdprogStatus::Numerical,
        Error::MonotoneLikelihood(_) => AdprogStatus::MonotoneLikelihood,
        Error::NoEvents => AdprogStatus::NoEvents,
        Error::SingleClass => AdprogStatus::SingleClass,
        _ => AdprogStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AdprogStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AdprogStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AdprogStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AdprogStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn rows(ptr: *const f64, n: usize, d: usize, what: &'static str) -> Result<Vec<Vec<f64>>, Fail> {
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Fail::Core(Error::InvalidArgument("matrix size overflows".into())))?;
    let flat = slice(ptr, len, what)?;
    Ok((0..n).map(|i| flat[i * d..(i + 1) * d].to_vec()).collect())
}

unsafe fn out<'a, T>(ptr: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &'static str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or(Fail::Null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adprog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn adprog_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fits a GP with an isotropic RBF kernel and fixed hyperparameters.
///
/// # Safety
/// `x` must hold `n * d` values, `y` must hold `n`, `out_gp` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn adprog_gp_fit(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    signal_variance: f64,
    lengthscale: f64,
    noise_variance: f64,
    prior_mean: f64,
    out_gp: *mut *mut AdprogGp,
) -> AdprogStatus {
    guard(|| {
        let slot = out(out_gp, "out_gp")?;
        let x = rows(x, n, d, "x")?;
        let y = slice(y, n, "y")?;
        let hyper = GpHyper {
            kernel: KernelSpec::rbf_iso(signal_variance, lengthscale)?,
            noise_variance,
            prior_mean,
        };
        let inner = gp_fit(&x, y, &hyper)?;
        *slot = Box::into_raw(Box::new(AdprogGp { inner }));
        Ok(())
    })
}

/// Fits a GP after maximizing the evidence from data-derived starting values
/// for at most `budget` ascent steps.
///
/// # Safety
/// As for [`adprog_gp_fit`].
#[no_mangle]
pub unsafe extern "C" fn adprog_gp_fit_optimized(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    budget: usize,
    out_gp: *mut *mut AdprogGp,
) -> AdprogStatus {
    guard(|| {
        let slot = out(out_gp, "out_gp")?;
        let x = rows(x, n, d, "x")?;
        let y = slice(y, n, "y")?;
        let options = OptimizeOptions {
            budget,
            ..Default::default()
        };
        let (hyper, _) = optimize_hyperparameters(&x, y, &default_hyper(y, d), &options)?;
        let inner = gp_fit(&x, y, &hyper)?;
        *slot = Box::into_raw(Box::new(AdprogGp { inner }));
        Ok(())
    })
}

/// Predictive mean and variance at one input of length `d`.
///
/// # Safety
/// `gp` must come from a GP fit call; `x` must hold `d` values.
#[no_mangle]
pub unsafe extern "C" fn adprog_gp_predict(
    gp: *const AdprogGp,
    x: *const f64,
    d: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> AdprogStatus {
    guard(|| {
        let gp = handle(gp, "gp")?;
        let x = slice(x, d, "x")?;
        let (m, v) = (out(mean, "mean")?, out(variance, "variance")?);
        let p = gp.inner.predict(x)?;
        *m = p.mean;
        *v = p.variance;
        Ok(())
    })
}

/// Log marginal likelihood of the training data.
///
/// # Safety
/// `gp` must come from a GP fit call.
#[no_mangle]
pub unsafe extern "C" fn adprog_gp_log_marginal_likelihood(gp: *const AdprogGp, value: *mut f64) -> AdprogStatus {
    guard(|| {
        let gp = handle(gp, "gp")?;
        *out(value, "value")? = gp.inner.log_marginal_likelihood().0;
        Ok(())
    })
}

/// Hyperparameters in natural scale. `lengthscale` receives the first
/// lengthscale of the kernel.
///
/// # Safety
/// `gp` must come from a GP fit call; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn adprog_gp_hyperparameters(
    gp: *const AdprogGp,
    signal_variance: *mut f64,
    lengthscale: *mut f64,
    noise_variance: *mut f64,
    prior_mean: *mut f64,
) -> AdprogStatus {
    guard(|| {
        let h = handle(gp, "gp")?.inner.hyper();
        *out(signal_variance, "signal_variance")? = h.kernel.signal_variance();
        *out(lengthscale, "lengthscale")? = h.kernel.lengthscales()[0];
        *out(noise_variance, "noise_variance")? = h.noise_variance;
        *out(prior_mean, "prior_mean")? = h.prior_mean;
        Ok(())
    })
}

/// # Safety
/// `gp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adprog_gp_free(gp: *mut AdprogGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Fits a Cox model. `ties` is 0 for Breslow, 1 for Efron and 2 for exact; `event` entries
/// are nonzero for observed conversions.
///
/// # Safety
/// `z` must hold `n * p` values, `time` and `event` must hold `n`.
#[no_mangle]
pub unsafe extern "C" fn adprog_cox_fit(
    z: *const f64,
    n: usize,
    p: usize,
    time: *const f64,
    event: *const u8,
    ties: c_int,
    out_cox: *mut *mut AdprogCox,
) -> AdprogStatus {
    guard(|| {
        let slot = out(out_cox, "out_cox")?;
        let z = rows(z, n, p, "z")?;
        let time = slice(time, n, "time")?;
        let event = slice(event, n, "event")?;
        let ties = match ties {
            0 => Ties::Breslow,
            1 => Ties::Efron,
            2 => Ties::Exact,
            t => return Err(Error::InvalidArgument(format!("ties must be 0, 1 or 2, got {t}")).into()),
        };
        let records: Vec<SurvivalRecord> = z
            .into_iter()
            .zip(time)
            .zip(event)
            .map(|((z, &time), &e)| SurvivalRecord { z, time, event: e != 0 })
            .collect();
        let inner = cox_fit(&records, &CoxOptions { ties, ..Default::default() })?;
        *slot = Box::into_raw(Box::new(AdprogCox { inner }));
        Ok(())
    })
}

/// Number of coefficients of a fitted Cox model.
///
/// # Safety
/// `cox` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adprog_cox_dim(cox: *const AdprogCox) -> usize {
    cox.as_ref().map_or(0, |c| c.inner.beta.len())
}

/// Copies the `p` coefficients into `beta`.
///
/// # Safety
/// `beta` must be writable for `p` values.
#[no_mangle]
pub unsafe extern "C" fn adprog_cox_coefficients(cox: *const AdprogCox, beta: *mut f64, p: usize) -> AdprogStatus {
    guard(|| {
        let c = handle(cox, "cox")?;
        if p != c.inner.beta.len() {
            return Err(Error::Dimension {
                expected: c.inner.beta.len(),
                got: p,
            }
            .into());
        }
        if beta.is_null() {
            return Err(Fail::Null("beta"));
        }
        std::ptr::copy_nonoverlapping(c.inner.beta.as_ptr(), beta, p);
        Ok(())
    })
}

/// Conversion probabilities for the four windows ending at 6, 12, 18 and 24
/// months. With `normalize` nonzero they are rescaled to sum to one.
///
/// # Safety
/// `z` must hold `p` values and `probabilities` must be writable for 4.
#[no_mangle]
pub unsafe extern "C" fn adprog_cox_conversion_probabilities(
    cox: *const AdprogCox,
    z: *const f64,
    p: usize,
    normalize: c_int,
    probabilities: *mut f64,
) -> AdprogStatus {
    guard(|| {
        let c = handle(cox, "cox")?;
        let z = slice(z, p, "z")?;
        if probabilities.is_null() {
            return Err(Fail::Null("probabilities"));
        }
        let probs = conversion_probabilities(&c.inner, z, normalize != 0)?;
        std::ptr::copy_nonoverlapping(probs.as_ptr(), probabilities, 4);
        Ok(())
    })
}

/// # Safety
/// `cox` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adprog_cox_free(cox: *mut AdprogCox) {
    if !cox.is_null() {
        drop(Box::from_raw(cox));
    }
}

/// Trains the linear classifier on labels in {-1, +1}.
///
/// # Safety
/// `x` must hold `n * d` values and `y` must hold `n`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn adprog_svm_train(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const i8,
    c: f64,
    epochs: usize,
    seed: u64,
    out_svm: *mut *mut AdprogSvm,
) -> AdprogStatus {
    guard(|| {
        let slot = out(out_svm, "out_svm")?;
        let x = rows(x, n, d, "x")?;
        let y = slice(y, n, "y")?;
        let options = SvmOptions {
            c,
            epochs,
            seed,
            ..Default::default()
        };
        let inner = svm_train(&x, y, &options)?;
        *slot = Box::into_raw(Box::new(AdprogSvm { inner }));
        Ok(())
    })
}

/// Predicted label in {-1, +1} and the decision score for one input.
///
/// # Safety
/// `x` must hold `d` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn adprog_svm_predict(
    svm: *const AdprogSvm,
    x: *const f64,
    d: usize,
    label: *mut i8,
    score: *mut f64,
) -> AdprogStatus {
    guard(|| {
        let s = handle(svm, "svm")?;
        let x = slice(x, d, "x")?;
        let (l, sc) = (out(label, "label")?, out(score, "score")?);
        let (pred, value) = svm_predict(&s.inner, x)?;
        *l = pred;
        *sc = value;
        Ok(())
    })
}

/// # Safety
/// `svm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adprog_svm_free(svm: *mut AdprogSvm) {
    if !svm.is_null() {
        drop(Box::from_raw(svm));
    }
}

/// Confusion counts and rates for boolean predictions against truth.
///
/// # Safety
/// `predicted` and `truth` must hold `n` values; `metrics` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adprog_classification_metrics(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    metrics: *mut AdprogMetrics,
) -> AdprogStatus {
    guard(|| {
        let slot = out(metrics, "metrics")?;
        let pred: Vec<bool> = slice(predicted, n, "predicted")?.iter().map(|&v| v != 0).collect();
        let truth: Vec<bool> = slice(truth, n, "truth")?.iter().map(|&v| v != 0).collect();
        let m = classification_metrics(&pred, &truth)?;
        *slot = AdprogMetrics {
            tp: m.confusion.tp as u64,
            fp: m.confusion.fp as u64,
            fn_: m.confusion.fn_ as u64,
            tn: m.confusion.tn as u64,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            accuracy: m.accuracy,
            precision_undefined: m.precision_undefined as u8,
            recall_undefined: m.recall_undefined as u8,
            f1_undefined: m.f1_undefined as u8,
            accuracy_undefined: m.accuracy_undefined as u8,
        };
        Ok(())
    })
}
