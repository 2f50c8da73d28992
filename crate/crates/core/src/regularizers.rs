//! Posterior differential penalties: Jacobian regularization (JR), random
//! perturbation training (RPT) and virtual adversarial training (VAT), plus
//! the weighted-Jacobian quadratic form that every f-divergence penalty
//! reduces to for small perturbations.
//!
//! RPT and VAT treat the clean posterior `f(x)` as a constant unless
//! [`RegularizerSpec::through_clean`] is set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergences::{
    centered_grad_first, centered_grad_second, divergence, generator, Generator, GeneratorKind,
    PROB_FLOOR,
};
use crate::error::{check_len, Error, Result};
use crate::model::{ForwardTrace, MlpModel, Params};
use crate::tensor::{
    add, gaussian_vec, norm_l1, norm_l2, scale, softmax_vjp, spectral_norm, sub, Matrix,
    RandomSource,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    Linf,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(NormKind::L2),
            "linf" | "inf" => Ok(NormKind::Linf),
            other => Err(Error::invalid(format!("unknown norm `{other}` (expected l2 or linf)"))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

pub const DEFAULT_ASCENT_STEPS: usize = 1;
pub const DEFAULT_STEP_SIZE: f64 = 1e-3;
pub const DEFAULT_INIT_STD: f64 = 1e-5;
pub const DEFAULT_RADIUS: f64 = 0.2;
/// Weight grid searched for RPT and VAT.
pub const ALPHA_GRID: [f64; 3] = [1.0, 4.0, 10.0];
/// Weight grid searched for JR.
pub const JR_ALPHA_GRID: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub radius: f64,
    pub norm: NormKind,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub init_std: f64,
    pub samples_per_example: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            radius: DEFAULT_RADIUS,
            norm: NormKind::L2,
            ascent_steps: DEFAULT_ASCENT_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            init_std: DEFAULT_INIT_STD,
            samples_per_example: 1,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("perturbation {name} must be > 0, got {v}")))
            }
        };
        positive(self.radius, "radius")?;
        positive(self.step_size, "step_size")?;
        positive(self.init_std, "init_std")?;
        if self.samples_per_example == 0 {
            return Err(Error::invalid("samples_per_example must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Jr,
    Rpt,
    Vat,
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "std" => Ok(RegularizerKind::None),
            "jr" => Ok(RegularizerKind::Jr),
            "rpt" => Ok(RegularizerKind::Rpt),
            "vat" => Ok(RegularizerKind::Vat),
            other => Err(Error::invalid(format!(
                "unknown regularizer `{other}` (expected none, jr, rpt or vat)"
            ))),
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularizerKind::None => "none",
            RegularizerKind::Jr => "jr",
            RegularizerKind::Rpt => "rpt",
            RegularizerKind::Vat => "vat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub divergence: GeneratorKind,
    pub perturbation: PerturbationConfig,
    pub alpha: f64,
    /// Let gradients flow through the clean posterior as well.
    pub through_clean: bool,
    /// Evaluate `D_g(f(x), f(x+ε))` instead of `D_g(f(x+ε), f(x))`.
    pub swap_arguments: bool,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec::none()
    }
}

impl RegularizerSpec {
    pub fn none() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::None,
            divergence: GeneratorKind::Kl,
            perturbation: PerturbationConfig::default(),
            alpha: 0.0,
            through_clean: false,
            swap_arguments: false,
        }
    }

    pub fn jr(alpha: f64) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Jr,
            alpha,
            ..RegularizerSpec::none()
        }
    }

    pub fn rpt(divergence: GeneratorKind, alpha: f64, perturbation: PerturbationConfig) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Rpt,
            divergence,
            perturbation,
            alpha,
            through_clean: false,
            swap_arguments: false,
        }
    }

    pub fn vat(divergence: GeneratorKind, alpha: f64, perturbation: PerturbationConfig) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Vat,
            ..RegularizerSpec::rpt(divergence, alpha, perturbation)
        }
    }

    /// Weight actually applied: zero for `None`.
    pub fn effective_alpha(&self) -> f64 {
        match self.kind {
            RegularizerKind::None => 0.0,
            _ => self.alpha,
        }
    }

    /// True when the penalty contributes to the objective.
    pub fn is_active(&self) -> bool {
        self.effective_alpha() > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if matches!(self.kind, RegularizerKind::Rpt | RegularizerKind::Vat) {
            self.perturbation.validate()?;
        }
        Ok(())
    }

    /// Short label such as `VAT_KL`, `RPT_JSD`, `JR` or `STD`.
    pub fn label(&self) -> String {
        match self.kind {
            RegularizerKind::None => "STD".into(),
            RegularizerKind::Jr => "JR".into(),
            RegularizerKind::Rpt => format!("RPT_{}", self.divergence),
            RegularizerKind::Vat => format!("VAT_{}", self.divergence),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyResult {
    pub value: f64,
    pub param_grads: Params,
    /// The perturbation the value was evaluated at (VAT's `ε*`).
    pub adversarial_direction: Option<Vec<f64>>,
}

/// Projects onto the radius-`c` ball: L2 rescales onto the sphere
/// `c·δ/‖δ‖₂`, Linf clamps each coordinate to `[−c, c]`.
pub fn project_to_ball(delta: &[f64], radius: f64, norm: NormKind) -> Vec<f64> {
    match norm {
        NormKind::L2 => {
            let n = norm_l2(delta);
            if n == 0.0 {
                vec![0.0; delta.len()]
            } else {
                scale(delta, radius / n)
            }
        }
        NormKind::Linf => delta.iter().map(|d| d.clamp(-radius, radius)).collect(),
    }
}

/// Divergence at a fixed perturbation together with its gradients.
struct BranchEval {
    value: f64,
    params: Params,
    input_grad: Vec<f64>,
}

/// Posterior-space adjoints for (noisy, clean) given the argument order.
pub(crate) fn divergence_adjoints<G: Generator + ?Sized>(
    g: &G,
    noisy: &[f64],
    clean: &[f64],
    swap: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    if swap {
        let v = divergence(g, clean, noisy).expect("equal lengths");
        (v, centered_grad_second(g, clean, noisy), centered_grad_first(g, clean, noisy))
    } else {
        let v = divergence(g, noisy, clean).expect("equal lengths");
        (v, centered_grad_first(g, noisy, clean), centered_grad_second(g, noisy, clean))
    }
}

fn eval_at<G: Generator + ?Sized>(
    model: &MlpModel,
    clean: &ForwardTrace,
    eps: &[f64],
    g: &G,
    swap: bool,
    through_clean: bool,
    want_params: bool,
) -> BranchEval {
    let noisy = model.forward_unchecked(&add(clean.input(), eps));
    let (value, d_noisy, d_clean) =
        divergence_adjoints(g, noisy.posterior.probs(), clean.posterior.probs(), swap);
    let dz = softmax_vjp(noisy.posterior.probs(), &d_noisy);
    let noisy_grads = model.backward_from_logits(&noisy, dz, want_params);
    let mut params = noisy_grads.params;
    if want_params && through_clean {
        let dz = softmax_vjp(clean.posterior.probs(), &d_clean);
        params.add_scaled(&model.backward_from_logits(clean, dz, true).params, 1.0);
    }
    BranchEval {
        value,
        params,
        input_grad: noisy_grads.input_grad,
    }
}

fn check_input(model: &MlpModel, x: &[f64]) -> Result<ForwardTrace> {
    model.forward(x)
}

/// Divergence penalty at a caller-supplied perturbation `eps`, with exact
/// parameter gradients (the perturbation itself is held fixed).
pub fn penalty_at_perturbation(
    model: &MlpModel,
    x: &[f64],
    spec: &RegularizerSpec,
    eps: &[f64],
) -> Result<PenaltyResult> {
    let clean = check_input(model, x)?;
    check_len("perturbation", model.n_inputs(), eps.len())?;
    let g = generator(spec.divergence);
    let eval = eval_at(model, &clean, eps, &g, spec.swap_arguments, spec.through_clean, true);
    Ok(PenaltyResult {
        value: eval.value,
        param_grads: eval.params,
        adversarial_direction: Some(eps.to_vec()),
    })
}

/// Divergence value only, for an arbitrary generator.
pub fn divergence_at<G: Generator + ?Sized>(
    model: &MlpModel,
    x: &[f64],
    g: &G,
    eps: &[f64],
) -> Result<f64> {
    let clean = check_input(model, x)?;
    check_len("perturbation", model.n_inputs(), eps.len())?;
    let noisy = model.forward_unchecked(&add(x, eps));
    divergence(g, noisy.posterior.probs(), clean.posterior.probs())
}

/// `R = ‖J‖²_F` for the posterior Jacobian at `x`, with its exact gradient
/// with respect to the parameters.
pub fn jr_penalty(model: &MlpModel, x: &[f64]) -> Result<PenaltyResult> {
    let trace = check_input(model, x)?;
    let value = model.jacobian_from_trace(&trace).frobenius_norm_sq();
    let param_grads = jacobian_frobenius_grad(model, &trace);
    Ok(PenaltyResult {
        value,
        param_grads,
        adversarial_direction: None,
    })
}

/// Reverse pass through the forward-accumulated Jacobian chain
/// `J = S · W_L · D_{L−1} W_{L−1} ⋯ D_1 W_1` with `S = diag(p) − p pᵀ` and
/// `D_l = diag(1 − a_l²)`. The `S` and `D_l` adjoints are injected as extra
/// sources into an ordinary backward pass over the forward trace.
fn jacobian_frobenius_grad(model: &MlpModel, trace: &ForwardTrace) -> Params {
    let n_layers = model.n_layers();
    let n = model.n_inputs();
    let weights = model.weights();
    let p = trace.posterior.probs();
    let m = p.len();

    // Forward: tangent[l] = ∂a_l/∂x, kprod[l] = W_l · tangent[l].
    let mut tangent = vec![Matrix::identity(n)];
    let mut kprod = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let k = weights[l].matmul(&tangent[l]);
        if l + 1 < n_layers {
            let a = &trace.activations[l + 1];
            let mut next = k.clone();
            for (i, ai) in a.iter().enumerate() {
                let d = 1.0 - ai * ai;
                for v in next.row_mut(i) {
                    *v *= d;
                }
            }
            tangent.push(next);
        }
        kprod.push(k);
    }
    let logit_jac = &kprod[n_layers - 1];
    let mut jac = Matrix::zeros(m, n);
    for i in 0..m {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..m {
                let sik = if i == k { p[i] } else { 0.0 } - p[i] * p[k];
                s += sik * logit_jac.get(k, c);
            }
            jac.set(i, c, s);
        }
    }

    let mut grads = model.params().zeros_like();
    let jbar = jac.scaled(2.0);
    // S is symmetric, so M̄ = S·J̄.
    let mut mbar = Matrix::zeros(m, n);
    for i in 0..m {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..m {
                let sik = if i == k { p[i] } else { 0.0 } - p[i] * p[k];
                s += sik * jbar.get(k, c);
            }
            mbar.set(i, c, s);
        }
    }
    let sbar = jbar.matmul_t(logit_jac);
    let pbar: Vec<f64> = (0..m)
        .map(|k| {
            let cross: f64 = (0..m).map(|j| (sbar.get(k, j) + sbar.get(j, k)) * p[j]).sum();
            sbar.get(k, k) - cross
        })
        .collect();
    let mut logit_src = softmax_vjp(p, &pbar);

    // Adjoint sources on hidden activations from the D_l factors.
    let mut act_src: Vec<Vec<f64>> = trace.activations.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut kbar = mbar;
    for l in (0..n_layers).rev() {
        let gw = kbar.matmul_t(&tangent[l]);
        for (acc, v) in grads.weights[l].as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *acc += v;
        }
        if l == 0 {
            break;
        }
        let tbar = weights[l].t_matmul(&kbar);
        let a = &trace.activations[l];
        let k_prev = &kprod[l - 1];
        let mut next = tbar.clone();
        for (i, ai) in a.iter().enumerate() {
            let d = 1.0 - ai * ai;
            let dbar: f64 = tbar.row(i).iter().zip(k_prev.row(i)).map(|(x, y)| x * y).sum();
            act_src[l][i] += -2.0 * ai * dbar;
            for v in next.row_mut(i) {
                *v *= d;
            }
        }
        kbar = next;
    }

    // Ordinary backward pass over the trace with the injected sources.
    let mut dz = std::mem::take(&mut logit_src);
    for l in (0..n_layers).rev() {
        let a_prev = &trace.activations[l];
        for (r, &d) in dz.iter().enumerate() {
            for (gw, &a) in grads.weights[l].row_mut(r).iter_mut().zip(a_prev) {
                *gw += d * a;
            }
            grads.biases[l][r] += d;
        }
        if l == 0 {
            break;
        }
        let mut da = weights[l].t_mul_vec(&dz);
        for ((d, a), s) in da.iter_mut().zip(a_prev).zip(&act_src[l]) {
            *d += s;
            *d *= 1.0 - a * a;
        }
        dz = da;
    }
    grads
}

fn require_kind(spec: &RegularizerSpec, kinds: &[RegularizerKind], op: &str) -> Result<()> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{op} called with regularizer kind `{}`",
            spec.kind
        )))
    }
}

/// Mean divergence over `samples_per_example` draws `ε ~ N(0, c²I)`.
pub fn rpt_penalty(
    model: &MlpModel,
    x: &[f64],
    spec: &RegularizerSpec,
    rng: &mut RandomSource,
) -> Result<PenaltyResult> {
    require_kind(spec, &[RegularizerKind::Rpt], "rpt_penalty")?;
    spec.perturbation.validate()?;
    let clean = check_input(model, x)?;
    let g = generator(spec.divergence);
    let cfg = &spec.perturbation;
    let mut value = 0.0;
    let mut params = model.params().zeros_like();
    let mut last = Vec::new();
    for _ in 0..cfg.samples_per_example {
        let eps = gaussian_vec(rng, model.n_inputs(), cfg.radius)?;
        let eval = eval_at(model, &clean, &eps, &g, spec.swap_arguments, spec.through_clean, true);
        value += eval.value;
        params.add_scaled(&eval.params, 1.0);
        last = eps;
    }
    let inv = 1.0 / cfg.samples_per_example as f64;
    params.scale(inv);
    Ok(PenaltyResult {
        value: value * inv,
        param_grads: params,
        adversarial_direction: Some(last),
    })
}

/// Outcome of the inner maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSearch {
    /// The random start projected to the ball (what K = 0 would return).
    pub initial: Vec<f64>,
    /// `ε*` after the ascent steps and projection.
    pub perturbation: Vec<f64>,
}

/// Normalized-gradient ascent on `D_g(f(x+δ), f(x))` from a small Gaussian
/// start, followed by projection to the radius-`c` ball.
pub fn adversarial_search(
    model: &MlpModel,
    x: &[f64],
    spec: &RegularizerSpec,
    rng: &mut RandomSource,
) -> Result<AdversarialSearch> {
    let clean = check_input(model, x)?;
    spec.perturbation.validate()?;
    let g = generator(spec.divergence);
    Ok(search_from(model, &clean, spec, &g, rng))
}

fn search_from<G: Generator + ?Sized>(
    model: &MlpModel,
    clean: &ForwardTrace,
    spec: &RegularizerSpec,
    g: &G,
    rng: &mut RandomSource,
) -> AdversarialSearch {
    let cfg = &spec.perturbation;
    let mut delta = gaussian_vec(rng, model.n_inputs(), cfg.init_std).expect("validated config");
    let initial = project_to_ball(&delta, cfg.radius, cfg.norm);
    for _ in 0..cfg.ascent_steps {
        let eval = eval_at(model, clean, &delta, g, spec.swap_arguments, false, false);
        let gn = norm_l2(&eval.input_grad);
        if gn < 1e-12 {
            continue;
        }
        for (d, gi) in delta.iter_mut().zip(&eval.input_grad) {
            *d += cfg.step_size * gi / gn;
        }
    }
    AdversarialSearch {
        initial,
        perturbation: project_to_ball(&delta, cfg.radius, cfg.norm),
    }
}

pub fn vat_penalty(
    model: &MlpModel,
    x: &[f64],
    spec: &RegularizerSpec,
    rng: &mut RandomSource,
) -> Result<PenaltyResult> {
    require_kind(spec, &[RegularizerKind::Vat], "vat_penalty")?;
    let search = adversarial_search(model, x, spec, rng)?;
    let clean = model.forward_unchecked(x);
    let g = generator(spec.divergence);
    let eval = eval_at(
        model,
        &clean,
        &search.perturbation,
        &g,
        spec.swap_arguments,
        spec.through_clean,
        true,
    );
    Ok(PenaltyResult {
        value: eval.value,
        param_grads: eval.params,
        adversarial_direction: Some(search.perturbation),
    })
}

/// Dispatches on `spec.kind`; `None` yields a zero penalty.
pub fn penalty(
    model: &MlpModel,
    x: &[f64],
    spec: &RegularizerSpec,
    rng: &mut RandomSource,
) -> Result<PenaltyResult> {
    match spec.kind {
        RegularizerKind::None => {
            check_input(model, x)?;
            Ok(PenaltyResult {
                value: 0.0,
                param_grads: model.params().zeros_like(),
                adversarial_direction: None,
            })
        }
        RegularizerKind::Jr => jr_penalty(model, x),
        RegularizerKind::Rpt => rpt_penalty(model, x, spec, rng),
        RegularizerKind::Vat => vat_penalty(model, x, spec, rng),
    }
}

/// `(g″(1)/2) · εᵀ Jᵀ diag(1/f) J ε`, the local quadratic model of any
/// f-divergence penalty.
pub fn quadratic_penalty<G: Generator + ?Sized>(
    model: &MlpModel,
    x: &[f64],
    g: &G,
    eps: &[f64],
) -> Result<f64> {
    let trace = check_input(model, x)?;
    check_len("perturbation", model.n_inputs(), eps.len())?;
    let j = model.jacobian_from_trace(&trace);
    Ok(quadratic_form(&j, trace.posterior.probs(), g.curvature(), eps))
}

pub(crate) fn quadratic_form(j: &Matrix, probs: &[f64], curvature: f64, eps: &[f64]) -> f64 {
    let je = j.mul_vec(eps);
    let weighted: f64 = je
        .iter()
        .zip(probs)
        .map(|(v, p)| v * v / p.max(PROB_FLOOR))
        .sum();
    0.5 * curvature * weighted
}

/// Worst observed margins of the chain linking VAT's KL penalty to the
/// Jacobian norms; every field should be `≥ 0` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `2·KL(f(x)‖f(x+ε)) − ‖f(x+ε) − f(x)‖₂²`
    pub worst_gap: f64,
    /// `‖Δf‖₁² − ‖Δf‖₂²`
    pub worst_l1_over_l2: f64,
    /// `2·KL − ‖Δf‖₁²` (Pinsker)
    pub worst_pinsker: f64,
    /// `c²‖J‖²_sp − ‖Jε‖₂²`
    pub worst_spectral: f64,
    /// `c²‖J‖²_F − c²‖J‖²_sp`
    pub worst_frobenius: f64,
}

impl BoundCheck {
    fn merge(&mut self, other: &BoundCheck) {
        self.worst_gap = self.worst_gap.min(other.worst_gap);
        self.worst_l1_over_l2 = self.worst_l1_over_l2.min(other.worst_l1_over_l2);
        self.worst_pinsker = self.worst_pinsker.min(other.worst_pinsker);
        self.worst_spectral = self.worst_spectral.min(other.worst_spectral);
        self.worst_frobenius = self.worst_frobenius.min(other.worst_frobenius);
    }

    pub fn min_margin(&self) -> f64 {
        self.worst_gap
            .min(self.worst_l1_over_l2)
            .min(self.worst_pinsker)
            .min(self.worst_spectral)
            .min(self.worst_frobenius)
    }
}

/// Samples `trials` perturbations with `‖ε‖₂ = c` and records the worst
/// margins in the L2 ≤ L1 ≤ Pinsker ≤ spectral ≤ Frobenius chain.
pub fn l2_vs_kl_bound_check(
    model: &MlpModel,
    x: &[f64],
    c: f64,
    trials: usize,
    rng: &mut RandomSource,
) -> Result<BoundCheck> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let clean = check_input(model, x)?;
    let j = model.jacobian_from_trace(&clean);
    let sigma = spectral_norm(&j, 10_000, 1e-15);
    let frob = j.frobenius_norm_sq();
    let kl = generator(GeneratorKind::Kl);
    let mut out = BoundCheck {
        worst_gap: f64::INFINITY,
        worst_l1_over_l2: f64::INFINITY,
        worst_pinsker: f64::INFINITY,
        worst_spectral: f64::INFINITY,
        worst_frobenius: f64::INFINITY,
    };
    for _ in 0..trials {
        let dir = gaussian_vec(rng, model.n_inputs(), 1.0)?;
        let eps = project_to_ball(&dir, c, NormKind::L2);
        let noisy = model.forward_unchecked(&add(x, &eps));
        let diff = sub(noisy.posterior.probs(), clean.posterior.probs());
        let l2sq: f64 = diff.iter().map(|d| d * d).sum();
        let l1 = norm_l1(&diff);
        let two_kl = 2.0 * divergence(&kl, clean.posterior.probs(), noisy.posterior.probs())?;
        let je: f64 = j.mul_vec(&eps).iter().map(|v| v * v).sum();
        let c2 = c * c;
        out.merge(&BoundCheck {
            worst_gap: two_kl - l2sq,
            worst_l1_over_l2: l1 * l1 - l2sq,
            worst_pinsker: two_kl - l1 * l1,
            worst_spectral: c2 * sigma * sigma - je,
            worst_frobenius: c2 * frob - c2 * sigma * sigma,
        });
    }
    Ok(out)
}
