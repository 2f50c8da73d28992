//! C ABI over `pdr-lab`.
//!
//! Models are opaque heap handles created by `pdr_model_*` constructors and
//! released with [`pdr_model_free`]. Every fallible entry point returns a
//! [`PdrStatus`]; on failure the message is available from
//! [`pdr_last_error_message`] on the same thread. Panics are caught at the
//! boundary and reported as [`PdrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pdr_lab::divergences::{divergence, generator, GeneratorKind};
use pdr_lab::model::MlpModel;
use pdr_lab::regularizers::{
    jr_penalty, quadratic_penalty, rpt_penalty, vat_penalty, NormKind, PenaltyResult, PerturbationConfig,
    RegularizerSpec,
};
use pdr_lab::tensor::RandomSource;
use pdr_lab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    ContractViolation = 4,
    Unsupported = 5,
    ParseError = 6,
    IoError = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdrDivergence {
    Kl = 0,
    ReverseKl = 1,
    SquaredHellinger = 2,
    JensenShannon = 3,
}

impl From<PdrDivergence> for GeneratorKind {
    fn from(d: PdrDivergence) -> Self {
        match d {
            PdrDivergence::Kl => GeneratorKind::Kl,
            PdrDivergence::ReverseKl => GeneratorKind::ReverseKl,
            PdrDivergence::SquaredHellinger => GeneratorKind::SquaredHellinger,
            PdrDivergence::JensenShannon => GeneratorKind::JensenShannon,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdrNorm {
    L2 = 0,
    Linf = 1,
}

/// Perturbation settings for RPT and VAT.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdrPerturbation {
    pub radius: f64,
    pub norm: PdrNorm,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub init_std: f64,
    pub samples_per_example: usize,
}

impl From<PdrPerturbation> for PerturbationConfig {
    fn from(p: PdrPerturbation) -> Self {
        PerturbationConfig {
            radius: p.radius,
            norm: match p.norm {
                PdrNorm::L2 => NormKind::L2,
                PdrNorm::Linf => NormKind::Linf,
            },
            ascent_steps: p.ascent_steps,
            step_size: p.step_size,
            init_std: p.init_std,
            samples_per_example: p.samples_per_example,
        }
    }
}

/// Opaque model handle.
pub struct PdrModel {
    inner: MlpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PdrStatus {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } | Error::DegenerateObjective(_) => PdrStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => PdrStatus::DimensionMismatch,
        Error::Contract(_) => PdrStatus::ContractViolation,
        Error::Unsupported(_) => PdrStatus::Unsupported,
        Error::Parse { .. } | Error::Json(_) => PdrStatus::ParseError,
        Error::Io { .. } => PdrStatus::IoError,
    }
}

struct Fail(PdrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PdrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PdrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside pdr-lab");
            PdrStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const PdrModel) -> Result<&'a MlpModel, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), Fail> {
    if expected == found {
        Ok(())
    } else {
        Err(Fail(
            PdrStatus::DimensionMismatch,
            format!("{what}: expected length {expected}, found {found}"),
        ))
    }
}

unsafe fn emit_model(out: *mut *mut PdrModel, inner: MlpModel) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(PdrModel { inner }));
    Ok(())
}

unsafe fn dims<'a>(layer_dims: *const usize, n_dims: usize) -> Result<&'a [usize], Fail> {
    if layer_dims.is_null() {
        return Err(null("layer_dims"));
    }
    Ok(std::slice::from_raw_parts(layer_dims, n_dims))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `pdr_*` call on the thread.
#[no_mangle]
pub extern "C" fn pdr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library defaults: radius 0.2, L2, K = 1, step 1e-3, init std 1e-5, one sample.
#[no_mangle]
pub extern "C" fn pdr_perturbation_default() -> PdrPerturbation {
    let d = PerturbationConfig::default();
    PdrPerturbation {
        radius: d.radius,
        norm: match d.norm {
            NormKind::L2 => PdrNorm::L2,
            NormKind::Linf => PdrNorm::Linf,
        },
        ascent_steps: d.ascent_steps,
        step_size: d.step_size,
        init_std: d.init_std,
        samples_per_example: d.samples_per_example,
    }
}

/// All-zero model with the given layer widths (input first, classes last).
///
/// # Safety
/// `layer_dims` must point to `n_dims` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_new_zeros(
    layer_dims: *const usize,
    n_dims: usize,
    out: *mut *mut PdrModel,
) -> PdrStatus {
    guard(|| {
        let m = MlpModel::zeros(dims(layer_dims, n_dims)?)?;
        emit_model(out, m)
    })
}

/// Randomly initialized model, deterministic in `seed`.
///
/// # Safety
/// As [`pdr_model_new_zeros`].
#[no_mangle]
pub unsafe extern "C" fn pdr_model_init(
    layer_dims: *const usize,
    n_dims: usize,
    seed: u64,
    out: *mut *mut PdrModel,
) -> PdrStatus {
    guard(|| {
        let mut rng = RandomSource::new(seed, 0);
        let m = MlpModel::init(dims(layer_dims, n_dims)?, &mut rng)?;
        emit_model(out, m)
    })
}

/// Model from the JSON document written by `pdr-lab train --save-model`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_from_json(json: *const c_char, out: *mut *mut PdrModel) -> PdrStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Fail(PdrStatus::ParseError, "json is not UTF-8".into()))?;
        emit_model(out, MlpModel::from_json(text)?)
    })
}

/// Serializes the model; release the string with [`pdr_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_to_json(model: *const PdrModel, out: *mut *mut c_char) -> PdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = CString::new(m.to_json()).expect("JSON has no NUL");
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`pdr_model_to_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pdr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `model` must come from a `pdr_model_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_free(model: *mut PdrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_n_inputs(model: *const PdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_inputs())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_n_classes(model: *const PdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_classes())
}

/// Length of the flat parameter vector used by gradient outputs.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_n_parameters(model: *const PdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params().len())
}

/// Posterior f(x) into `probs` (length n_classes).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_predict(
    model: *const PdrModel,
    x: *const f64,
    n: usize,
    probs: *mut f64,
    m: usize,
) -> PdrStatus {
    guard(|| {
        let model = model_ref(model)?;
        let x = slice(x, n, "x")?;
        check_len("probs", model.n_classes(), m)?;
        let p = model.predict(x)?;
        slice_mut(probs, m, "probs")?.copy_from_slice(p.probs());
        Ok(())
    })
}

/// Input Jacobian ∂f/∂x, row-major m × n, into `out` (length m·n).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pdr_model_input_jacobian(
    model: *const PdrModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> PdrStatus {
    guard(|| {
        let model = model_ref(model)?;
        let x = slice(x, n, "x")?;
        check_len("out", model.n_classes() * model.n_inputs(), out_len)?;
        let j = model.input_jacobian(x)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(j.as_slice());
        Ok(())
    })
}

/// D_g(p_hat, p) = Σ p_i g(p_hat_i / p_i).
///
/// # Safety
/// `p_hat` and `p` must hold `m` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdr_f_divergence(
    kind: PdrDivergence,
    p_hat: *const f64,
    p: *const f64,
    m: usize,
    out: *mut f64,
) -> PdrStatus {
    guard(|| {
        let a = slice(p_hat, m, "p_hat")?;
        let b = slice(p, m, "p")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = divergence(&generator(kind.into()), a, b)?;
        Ok(())
    })
}

unsafe fn emit_penalty(
    r: &PenaltyResult,
    value: *mut f64,
    grads: *mut f64,
    grads_len: usize,
) -> Result<(), Fail> {
    if value.is_null() {
        return Err(null("value"));
    }
    *value = r.value;
    if !grads.is_null() {
        check_len("grads", r.param_grads.len(), grads_len)?;
        let out = slice_mut(grads, grads_len, "grads")?;
        for (o, g) in out.iter_mut().zip(r.param_grads.iter()) {
            *o = *g;
        }
    }
    Ok(())
}

/// JR penalty ‖J‖²_F; `grads` (length n_parameters) may be null.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pdr_jr_penalty(
    model: *const PdrModel,
    x: *const f64,
    n: usize,
    value: *mut f64,
    grads: *mut f64,
    grads_len: usize,
) -> PdrStatus {
    guard(|| {
        let r = jr_penalty(model_ref(model)?, slice(x, n, "x")?)?;
        emit_penalty(&r, value, grads, grads_len)
    })
}

/// Second-order form (g''(1)/2)·εᵀJᵀdiag(1/f)Jε.
///
/// # Safety
/// `x` and `eps` must hold `n` values; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdr_quadratic_penalty(
    model: *const PdrModel,
    x: *const f64,
    eps: *const f64,
    n: usize,
    kind: PdrDivergence,
    value: *mut f64,
) -> PdrStatus {
    guard(|| {
        let q = quadratic_penalty(
            model_ref(model)?,
            slice(x, n, "x")?,
            &generator(kind.into()),
            slice(eps, n, "eps")?,
        )?;
        if value.is_null() {
            return Err(null("value"));
        }
        *value = q;
        Ok(())
    })
}

/// RPT penalty with Gaussian noise drawn from `seed`; `grads` may be null.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `cfg` must be readable.
#[no_mangle]
pub unsafe extern "C" fn pdr_rpt_penalty(
    model: *const PdrModel,
    x: *const f64,
    n: usize,
    kind: PdrDivergence,
    cfg: *const PdrPerturbation,
    seed: u64,
    value: *mut f64,
    grads: *mut f64,
    grads_len: usize,
) -> PdrStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let spec = RegularizerSpec::rpt(kind.into(), 1.0, (*cfg).into());
        let r = rpt_penalty(model_ref(model)?, slice(x, n, "x")?, &spec, &mut RandomSource::new(seed, 0))?;
        emit_penalty(&r, value, grads, grads_len)
    })
}

/// VAT penalty; writes ε* to `eps_out` (length n) unless null.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `cfg` must be readable.
#[no_mangle]
pub unsafe extern "C" fn pdr_vat_penalty(
    model: *const PdrModel,
    x: *const f64,
    n: usize,
    kind: PdrDivergence,
    cfg: *const PdrPerturbation,
    seed: u64,
    value: *mut f64,
    eps_out: *mut f64,
    grads: *mut f64,
    grads_len: usize,
) -> PdrStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let spec = RegularizerSpec::vat(kind.into(), 1.0, (*cfg).into());
        let r = vat_penalty(model_ref(model)?, slice(x, n, "x")?, &spec, &mut RandomSource::new(seed, 0))?;
        if !eps_out.is_null() {
            let eps = r.adversarial_direction.as_deref().unwrap_or(&[]);
            check_len("eps_out", eps.len(), n)?;
            slice_mut(eps_out, n, "eps_out")?.copy_from_slice(eps);
        }
        emit_penalty(&r, value, grads, grads_len)
    })
}
