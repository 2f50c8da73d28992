//! Machine-checked property suites behind `pdr-lab verify`.
//!
//! Each suite runs `trials` independent random instances. Trial `i` draws
//! from `RandomSource::new(seed, 0).split(i)`, so results do not depend on
//! scheduling. Trials may run on a rayon pool and are reduced in index order.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::divergences::{divergence, generator, Generator, GeneratorFn, GeneratorKind};
use crate::error::{Error, Result};
use crate::model::{MlpModel, Params};
use crate::regularizers::{
    adversarial_search, divergence_at, jr_penalty, l2_vs_kl_bound_check,
    quadratic_penalty, rpt_penalty, vat_penalty, PerturbationConfig, RegularizerSpec,
};
use crate::span::{
    span_divergences_at, span_forward, span_loss, span_penalty_at_perturbation,
    span_quadratic_penalty, SpanExample, SpanModel,
};
use crate::tensor::{gaussian_vec, spectral_norm, Matrix, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Divergence,
    Jacobian,
    Vat,
    Spans,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Divergence, Suite::Jacobian, Suite::Vat, Suite::Spans];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Divergence => "divergence",
            Suite::Jacobian => "jacobian",
            Suite::Vat => "vat",
            Suite::Spans => "spans",
        }
    }
}

/// A `--suite` argument: one suite or all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSelection {
    One(Suite),
    All,
}

impl SuiteSelection {
    pub fn suites(self) -> Vec<Suite> {
        match self {
            SuiteSelection::One(s) => vec![s],
            SuiteSelection::All => Suite::ALL.to_vec(),
        }
    }
}

impl FromStr for SuiteSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SuiteSelection::All),
            other => Suite::ALL
                .iter()
                .find(|x| x.name() == other)
                .map(|x| SuiteSelection::One(*x))
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown suite `{other}` (expected divergence, jacobian, vat, spans or all)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: &'static str,
    pub property: String,
    pub passed: bool,
    /// Worst value of the checked quantity over all trials.
    pub observed: f64,
    pub relation: Relation,
    pub limit: f64,
    pub samples: usize,
}

impl PropertyResult {
    /// Distance to the limit on the allowed side (negative when violated).
    pub fn margin(&self) -> f64 {
        match self.relation {
            Relation::AtMost => self.limit - self.observed,
            Relation::AtLeast => self.observed - self.limit,
        }
    }
}

/// Measured second-order convergence for one generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub generator: String,
    /// Median over trials of `|D(tε) − t²Q(ε)| / t³` at each `t`.
    pub median_cubic_ratio: [f64; 3],
    /// Worst `max/min` of that ratio across the three decades.
    pub worst_spread: f64,
    /// Worst `|D(tε)/t² − Q(ε)| / max(Q, 1e-9)` at the smallest `t`.
    pub worst_relative_error: f64,
}

pub const DECADES: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const MAX_DECADE_SPREAD: f64 = 5.0;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
/// Trials entering the paired VAT-vs-RPT mean comparison.
pub const PAIRED_TRIALS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<&'static str>,
    pub trials: usize,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
    pub convergence: Vec<ConvergenceRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.properties.iter().filter(|p| !p.passed).collect()
    }

    /// Human-readable report with 12 significant digits.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "verify suites={} trials={} seed={}",
            self.suites.join(","),
            self.trials,
            self.seed
        );
        for p in &self.properties {
            let rel = match p.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            let _ = writeln!(
                s,
                "{} {}/{}: worst {} {} {} (margin {}, n={})",
                if p.passed { "PASS" } else { "FAIL" },
                p.suite,
                p.property,
                sig12(p.observed),
                rel,
                sig12(p.limit),
                sig12(p.margin()),
                p.samples
            );
        }
        if !self.convergence.is_empty() {
            let _ = writeln!(s, "second-order convergence (median |D(tε) - t²Q|/t³ at t = 1e-2, 1e-3, 1e-4):");
            for c in &self.convergence {
                let _ = writeln!(
                    s,
                    "  {:>4}: {} {} {}  spread {}  rel.err@1e-4 {}",
                    c.generator,
                    sig12(c.median_cubic_ratio[0]),
                    sig12(c.median_cubic_ratio[1]),
                    sig12(c.median_cubic_ratio[2]),
                    sig12(c.worst_spread),
                    sig12(c.worst_relative_error)
                );
            }
        }
        let n_fail = self.failures().len();
        let _ = writeln!(
            s,
            "{}: {} properties, {} failed",
            if n_fail == 0 { "OK" } else { "FAILED" },
            self.properties.len(),
            n_fail
        );
        s
    }
}

/// Formats with 12 significant digits.
pub fn sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.11e}")
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// One named scalar per trial, reduced to its worst value.
struct Check {
    name: String,
    relation: Relation,
    limit: f64,
}

impl Check {
    fn at_most(name: impl Into<String>, limit: f64) -> Self {
        Check {
            name: name.into(),
            relation: Relation::AtMost,
            limit,
        }
    }

    fn at_least(name: impl Into<String>, limit: f64) -> Self {
        Check {
            name: name.into(),
            relation: Relation::AtLeast,
            limit,
        }
    }
}

/// Per-trial values aligned with the suite's check list; `None` means the
/// check does not apply to this trial.
type Outcome = Vec<Option<f64>>;

fn reduce(suite: Suite, checks: &[Check], outcomes: &[Outcome]) -> Vec<PropertyResult> {
    checks
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let values = outcomes.iter().filter_map(|o| o[k]);
            let (mut observed, mut samples) = match c.relation {
                Relation::AtMost => (f64::NEG_INFINITY, 0),
                Relation::AtLeast => (f64::INFINITY, 0),
            };
            let mut nan = false;
            for v in values {
                samples += 1;
                nan |= v.is_nan();
                observed = match c.relation {
                    Relation::AtMost => observed.max(v),
                    Relation::AtLeast => observed.min(v),
                };
            }
            if nan {
                observed = f64::NAN;
            }
            let passed = samples > 0
                && !nan
                && match c.relation {
                    Relation::AtMost => observed <= c.limit,
                    Relation::AtLeast => observed >= c.limit,
                };
            PropertyResult {
                suite: suite.name(),
                property: c.name.clone(),
                passed,
                observed,
                relation: c.relation,
                limit: c.limit,
                samples,
            }
        })
        .collect()
}

fn trial_rng(seed: u64, suite: Suite, i: usize) -> RandomSource {
    RandomSource::new(seed, suite as u64 + 1).split(i as u64)
}

fn parallel_trials<F>(trials: usize, f: F) -> Vec<Outcome>
where
    F: Fn(usize) -> Outcome + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

/// Random simplex: uniform (Dirichlet(1)) or log-normal weights.
pub fn random_simplex(rng: &mut RandomSource, m: usize) -> Vec<f64> {
    let lognormal = rng.index(2) == 1;
    let w: Vec<f64> = (0..m)
        .map(|_| {
            if lognormal {
                (2.0 * rng.standard_normal()).exp()
            } else {
                -(1.0 - rng.uniform()).ln()
            }
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Small random MLP at default initialization with random biases.
pub fn random_model(rng: &mut RandomSource, max_in: usize, max_hidden: usize, max_classes: usize) -> MlpModel {
    random_scaled_model(rng, max_in, max_hidden, max_classes, (1.0, 1.0))
}

/// Like [`random_model`] with weights multiplied by a factor drawn from `scale`.
pub fn random_scaled_model(
    rng: &mut RandomSource,
    max_in: usize,
    max_hidden: usize,
    max_classes: usize,
    scale: (f64, f64),
) -> MlpModel {
    let n = 1 + rng.index(max_in);
    let m = 2 + rng.index(max_classes - 1);
    let mut dims = vec![n];
    for _ in 0..rng.index(3) {
        dims.push(1 + rng.index(max_hidden));
    }
    dims.push(m);
    let model = MlpModel::init(&dims, rng).expect("valid dims");
    let mut p: Params = model.params().clone();
    let s = scale.0 + (scale.1 - scale.0) * rng.uniform();
    p.scale(s);
    for b in p.biases.iter_mut() {
        for v in b.iter_mut() {
            *v = 0.5 * rng.standard_normal();
        }
    }
    MlpModel::from_params(&dims, p).expect("valid params")
}

fn kl_direct(p_hat: &[f64], p: &[f64]) -> f64 {
    p_hat
        .iter()
        .zip(p)
        .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum()
}

fn divergence_suite(trials: usize, seed: u64, gens: &[&dyn Generator]) -> Vec<PropertyResult> {
    let mut checks = Vec::new();
    for g in gens {
        let n = g.name();
        checks.push(Check::at_most(format!("{n}: g(1) = 0 (|g(1)|)"), 1e-15));
        checks.push(Check::at_least(format!("{n}: non-negativity D(p̂,p)"), -1e-12));
        checks.push(Check::at_most(format!("{n}: identity |D(p,p)|"), 0.0));
        checks.push(Check::at_most(format!("{n}: curvature |FD g''(1) - declared|"), 1e-4));
        checks.push(Check::at_most(format!("{n}: convexity excess"), 1e-12));
        match n {
            "KL" => checks.push(Check::at_most("KL: matches direct formula".to_string(), 1e-12)),
            "JSD" => {
                checks.push(Check::at_most("JSD: bounded by ln 2".to_string(), 2f64.ln() + 1e-12));
                checks.push(Check::at_most("JSD: symmetry".to_string(), 1e-12));
            }
            "SHL" => checks.push(Check::at_most("SHL: symmetry".to_string(), 1e-12)),
            _ => {}
        }
    }
    checks.push(Check::at_least("Pinsker: 2 KL - l1^2", -1e-12));
    let kl = generator(GeneratorKind::Kl);
    let outcomes = parallel_trials(trials, |i| {
        let mut rng = trial_rng(seed, Suite::Divergence, i);
        let m = [2, 3, 10][i % 3];
        let p_hat = random_simplex(&mut rng, m);
        let p = random_simplex(&mut rng, m);
        let a = 0.01 + 10.0 * rng.uniform();
        let b = 0.01 + 10.0 * rng.uniform();
        let lam = rng.uniform();
        let mut out = Vec::new();
        for g in gens {
            let d = divergence(*g, &p_hat, &p).expect("same length");
            out.push(Some(g.g(1.0).abs()));
            out.push(Some(d));
            out.push(Some(divergence(*g, &p, &p).expect("same length").abs()));
            let h = 1e-4;
            let fd = (g.g(1.0 + h) - 2.0 * g.g(1.0) + g.g(1.0 - h)) / (h * h);
            out.push(Some((fd - g.curvature()).abs()));
            let mix = g.g(lam * a + (1.0 - lam) * b);
            out.push(Some(mix - (lam * g.g(a) + (1.0 - lam) * g.g(b))));
            match g.name() {
                "KL" => out.push(Some((d - kl_direct(&p_hat, &p)).abs())),
                "JSD" => {
                    out.push(Some(d));
                    out.push(Some((d - divergence(*g, &p, &p_hat).expect("same length")).abs()));
                }
                "SHL" => out.push(Some((d - divergence(*g, &p, &p_hat).expect("same length")).abs())),
                _ => {}
            }
        }
        let l1: f64 = p_hat.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        out.push(Some(2.0 * divergence(&kl, &p_hat, &p).expect("same length") - l1 * l1));
        out
    });
    reduce(Suite::Divergence, &checks, &outcomes)
}

/// Per-trial second-order measurements for one generator.
#[derive(Clone, Copy)]
struct Decade {
    ratios: [f64; 3],
    rel_err: f64,
    slope0: f64,
    q: f64,
    d_zero: f64,
}

fn decade_test(d_at: impl Fn(f64) -> f64, q: f64) -> Decade {
    let mut ratios = [0.0; 3];
    for (k, t) in DECADES.iter().enumerate() {
        ratios[k] = (d_at(*t) - t * t * q).abs() / (t * t * t);
    }
    let t = DECADES[2];
    let rel_err = (d_at(t) / (t * t) - q).abs() / q.max(1e-9);
    let h = 1e-6;
    let slope0 = (d_at(h) - d_at(-h)) / (2.0 * h);
    Decade {
        ratios,
        rel_err,
        slope0,
        q,
        d_zero: d_at(0.0),
    }
}

/// Remainder ratios below this are indistinguishable from zero.
pub const RATIO_FLOOR: f64 = 1e-9;

fn spread(r: &[f64; 3]) -> f64 {
    let max = r.iter().fold(RATIO_FLOOR, |a, b| a.max(*b));
    let min = r.iter().fold(f64::INFINITY, |a, b| a.min(b.max(RATIO_FLOOR)));
    max / min
}

/// Uniform random direction on the unit sphere.
fn unit_direction(rng: &mut RandomSource, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n, 1.0).expect("std > 0");
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn convergence_rows(gens: &[&dyn Generator], per_trial: &[Vec<Decade>]) -> Vec<ConvergenceRow> {
    gens.iter()
        .enumerate()
        .map(|(k, g)| {
            let rows: Vec<Decade> = per_trial.iter().map(|t| t[k]).collect();
            ConvergenceRow {
                generator: g.name().to_string(),
                median_cubic_ratio: [0, 1, 2].map(|j| median(rows.iter().map(|r| r.ratios[j]).collect())),
                worst_spread: rows.iter().map(|r| spread(&r.ratios)).fold(0.0, f64::max),
                worst_relative_error: rows.iter().map(|r| r.rel_err).fold(0.0, f64::max),
            }
        })
        .collect()
}

fn decade_checks(prefix: &str, gens: &[&dyn Generator]) -> Vec<Check> {
    let mut checks = Vec::new();
    for g in gens {
        let n = g.name();
        checks.push(Check::at_most(format!("{prefix}{n}: D(0) = 0"), 0.0));
        checks.push(Check::at_most(format!("{prefix}{n}: D'(0) = 0 (|slope| / (1 + Q))"), 1e-6));
        checks.push(Check::at_most(format!("{prefix}{n}: cubic remainder spread across decades"), MAX_DECADE_SPREAD));
        checks.push(Check::at_most(format!("{prefix}{n}: |D(tε)/t² - Q| / Q at t = 1e-4"), SECOND_ORDER_TOL));
    }
    checks
}

fn decade_outcome(d: &Decade) -> [Option<f64>; 4] {
    [
        Some(d.d_zero.abs()),
        Some(d.slope0.abs() / (1.0 + d.q)),
        Some(spread(&d.ratios)),
        Some(d.rel_err),
    ]
}

/// Relative FD error of `grads` against `value_of` over every parameter.
pub fn fd_relative_error(
    model: &MlpModel,
    grads: &Params,
    value_of: impl Fn(&MlpModel) -> f64,
) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for idx in 0..grads.len() {
        let bump = |s: f64| {
            let mut p = model.params().clone();
            p.set_flat(idx, p.get_flat(idx) + s);
            MlpModel::from_params(model.layer_dims(), p).expect("finite")
        };
        let fd = (value_of(&bump(h)) - value_of(&bump(-h))) / (2.0 * h);
        let an = grads.get_flat(idx);
        let scale = fd.abs().max(an.abs()).max(1e-4);
        worst = worst.max((fd - an).abs() / scale);
    }
    worst
}

fn jacobian_suite(trials: usize, seed: u64, gens: &[&dyn Generator]) -> (Vec<PropertyResult>, Vec<ConvergenceRow>) {
    let mut checks = vec![
        Check::at_least("chain: 2 KL(f(x), f(x+ε)) - ||Δf||₂²", -1e-10),
        Check::at_least("chain: ||Δf||₁² - ||Δf||₂²", -1e-10),
        Check::at_least("chain: 2 KL - ||Δf||₁² (Pinsker)", -1e-10),
        Check::at_least("chain: c²||J||²_sp - ||Jε||²", -1e-10),
        Check::at_least("chain: c²||J||²_F - c²||J||²_sp", -1e-10),
        Check::at_most("spectral norm <= Frobenius norm (excess)", 1e-12),
        Check::at_most("JR gradient vs finite differences (rel.)", 1e-4),
    ];
    checks.extend(decade_checks("", gens));
    let results: Vec<(Outcome, Vec<Decade>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, Suite::Jacobian, i);
            let model = random_model(&mut rng, 4, 6, 4);
            let n = model.n_inputs();
            let x = gaussian_vec(&mut rng, n, 1.0).expect("std > 0");
            let chain = l2_vs_kl_bound_check(&model, &x, 0.1, 1, &mut rng).expect("valid");
            let j = model.input_jacobian(&x).expect("valid");
            let sp = spectral_norm(&j, 10_000, 1e-15);
            let mut out: Outcome = vec![
                Some(chain.worst_gap),
                Some(chain.worst_l1_over_l2),
                Some(chain.worst_pinsker),
                Some(chain.worst_spectral),
                Some(chain.worst_frobenius),
                Some(sp - j.frobenius_norm()),
            ];
            out.push(if i % 10 == 0 {
                let jr = jr_penalty(&model, &x).expect("valid");
                Some(fd_relative_error(&model, &jr.param_grads, |m| jr_penalty(m, &x).expect("valid").value))
            } else {
                None
            });
            let eps = unit_direction(&mut rng, n);
            let decades: Vec<Decade> = gens
                .iter()
                .map(|g| {
                    let q = quadratic_penalty(&model, &x, *g, &eps).expect("valid");
                    decade_test(
                        |t| {
                            let e: Vec<f64> = eps.iter().map(|v| v * t).collect();
                            divergence_at(&model, &x, *g, &e).expect("valid")
                        },
                        q,
                    )
                })
                .collect();
            for d in &decades {
                out.extend(decade_outcome(d));
            }
            (out, decades)
        })
        .collect();
    let outcomes: Vec<Outcome> = results.iter().map(|r| r.0.clone()).collect();
    let decades: Vec<Vec<Decade>> = results.into_iter().map(|r| r.1).collect();
    (reduce(Suite::Jacobian, &checks, &outcomes), convergence_rows(gens, &decades))
}

fn vat_suite(trials: usize, seed: u64) -> Vec<PropertyResult> {
    let checks = vec![
        Check::at_least("ascent: fraction with D(ε*) >= D(initial)", 0.95),
        Check::at_least("mean VAT penalty - mean RPT penalty (first 200 trials)", 0.0),
        Check::at_least("penalties non-negative (min value)", -1e-12),
        Check::at_most("frozen-ε penalty gradient vs finite differences (rel.)", 1e-4),
        Check::at_most("RPT at c = 1e-8 (value)", 1e-10),
    ];
    let c = 0.1;
    let cfg = PerturbationConfig {
        radius: c,
        step_size: c / 10.0,
        ..PerturbationConfig::default()
    };
    let kinds = GeneratorKind::ALL;
    let per_trial: Vec<[f64; 6]> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, Suite::Vat, i);
            let model = random_scaled_model(&mut rng, 4, 8, 4, (0.5, 2.0));
            let x = gaussian_vec(&mut rng, model.n_inputs(), 1.0).expect("std > 0");
            let kind = kinds[i % kinds.len()];
            let g: GeneratorFn = generator(kind);
            let vat = RegularizerSpec::vat(kind, 1.0, cfg.clone());
            let search = adversarial_search(&model, &x, &vat, &mut rng.split(1)).expect("valid");
            let win = divergence_at(&model, &x, &g, &search.perturbation).expect("valid")
                >= divergence_at(&model, &x, &g, &search.initial).expect("valid");
            let v = vat_penalty(&model, &x, &vat, &mut rng.split(2)).expect("valid");
            let rpt = RegularizerSpec::rpt(kind, 1.0, cfg.clone());
            let r = rpt_penalty(&model, &x, &rpt, &mut rng.split(3)).expect("valid");
            let fd = if i % 10 == 0 {
                let eps = v.adversarial_direction.clone().expect("vat direction");
                fd_relative_error(&model, &v.param_grads, |m| {
                    let clean = model.predict(&x).expect("valid");
                    let noisy = m
                        .predict(&x.iter().zip(&eps).map(|(a, b)| a + b).collect::<Vec<_>>())
                        .expect("valid");
                    divergence(&g, noisy.probs(), clean.probs()).expect("same length")
                })
            } else {
                f64::NAN
            };
            let tiny = RegularizerSpec::rpt(
                kind,
                1.0,
                PerturbationConfig {
                    radius: 1e-8,
                    ..cfg.clone()
                },
            );
            let t = rpt_penalty(&model, &x, &tiny, &mut rng.split(4)).expect("valid").value;
            [win as u8 as f64, v.value, r.value, v.value.min(r.value), fd, t]
        })
        .collect();
    let n = per_trial.len().max(1) as f64;
    let wins = per_trial.iter().map(|t| t[0]).sum::<f64>() / n;
    let paired = &per_trial[..per_trial.len().min(PAIRED_TRIALS)];
    let mean_gap = paired.iter().map(|t| t[1] - t[2]).sum::<f64>() / paired.len() as f64;
    let mut outcomes: Vec<Outcome> = vec![vec![Some(wins), Some(mean_gap), None, None, None]];
    for t in &per_trial {
        outcomes.push(vec![None, None, Some(t[3]), (!t[4].is_nan()).then_some(t[4]), Some(t[5])]);
    }
    reduce(Suite::Vat, &checks, &outcomes)
}

fn random_span_model(rng: &mut RandomSource) -> (SpanModel, Matrix) {
    let d = 1 + rng.index(3);
    let h = 1 + rng.index(5);
    let t = 1 + rng.index(6);
    let model = SpanModel::init(d, h, rng).expect("valid dims");
    let mut p = model.params().clone();
    for v in p.b.iter_mut() {
        *v = 0.3 * rng.standard_normal();
    }
    let model = SpanModel::from_params(p).expect("finite");
    let f = Matrix::from_row_major(t, d, gaussian_vec(rng, t * d, 1.0).expect("std > 0")).expect("finite");
    (model, f)
}

fn span_suite(trials: usize, seed: u64, gens: &[&dyn Generator]) -> (Vec<PropertyResult>, Vec<ConvergenceRow>) {
    let mut checks = vec![
        Check::at_most("joint span distribution |ΣΣ P_b P_e - 1|", 1e-12),
        Check::at_most("additivity |penalty - (D_b + D_e)|", 1e-12),
        Check::at_most("span loss gradient vs finite differences (rel.)", 1e-4),
    ];
    checks.extend(decade_checks("summed ", gens));
    let results: Vec<(Outcome, Vec<Decade>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, Suite::Spans, i);
            let (model, f) = random_span_model(&mut rng);
            let (pb, pe) = span_forward(&model, &f).expect("valid");
            let total: f64 = pb.probs().iter().map(|a| pe.probs().iter().map(|b| a * b).sum::<f64>()).sum();
            let n = f.as_slice().len();
            let eps = unit_direction(&mut rng, n);
            let small: Vec<f64> = eps.iter().map(|e| 0.1 * e).collect();
            let kind = GeneratorKind::ALL[i % 4];
            let spec = RegularizerSpec::vat(kind, 1.0, PerturbationConfig::default());
            let summed = span_penalty_at_perturbation(&model, &f, &spec, &small).expect("valid").value;
            let (db, de) = span_divergences_at(&model, &f, &generator(kind), &small).expect("valid");
            let mut out: Outcome = vec![Some((total - 1.0).abs()), Some((summed - db - de).abs())];
            out.push(if i % 10 == 0 {
                let t = f.rows();
                let s = rng.index(t);
                let ex = SpanExample::new(f.clone(), Some((s, s + rng.index(t - s)))).expect("valid");
                let (_, g) = span_loss(&model, &ex).expect("labeled");
                let h = 1e-6;
                let mut worst: f64 = 0.0;
                for idx in 0..g.len() {
                    let bump = |d: f64| {
                        let mut p = model.params().clone();
                        p.set_flat(idx, p.get_flat(idx) + d);
                        span_loss(&SpanModel::from_params(p).expect("finite"), &ex).expect("labeled").0
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = g.get_flat(idx);
                    worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
                }
                Some(worst)
            } else {
                None
            });
            let decades: Vec<Decade> = gens
                .iter()
                .map(|g| {
                    let q = span_quadratic_penalty(&model, &f, *g, &eps).expect("valid");
                    decade_test(
                        |t| {
                            let e: Vec<f64> = eps.iter().map(|v| v * t).collect();
                            let (a, b) = span_divergences_at(&model, &f, *g, &e).expect("valid");
                            a + b
                        },
                        q,
                    )
                })
                .collect();
            for d in &decades {
                out.extend(decade_outcome(d));
            }
            (out, decades)
        })
        .collect();
    let outcomes: Vec<Outcome> = results.iter().map(|r| r.0.clone()).collect();
    let decades: Vec<Vec<Decade>> = results.into_iter().map(|r| r.1).collect();
    let mut rows = convergence_rows(gens, &decades);
    for r in rows.iter_mut() {
        r.generator = format!("span {}", r.generator);
    }
    (reduce(Suite::Spans, &checks, &outcomes), rows)
}

/// The four built-in generators.
pub fn builtin_generators() -> Vec<GeneratorFn> {
    GeneratorKind::ALL.iter().map(|k| generator(*k)).collect()
}

/// Runs the selected suites against `gens`.
pub fn run(selection: SuiteSelection, trials: usize, seed: u64, gens: &[&dyn Generator]) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if gens.is_empty() {
        return Err(Error::invalid("at least one generator is required"));
    }
    let suites = selection.suites();
    let mut properties = Vec::new();
    let mut convergence = Vec::new();
    for s in &suites {
        match s {
            Suite::Divergence => properties.extend(divergence_suite(trials, seed, gens)),
            Suite::Jacobian => {
                let (p, c) = jacobian_suite(trials, seed, gens);
                properties.extend(p);
                convergence.extend(c);
            }
            Suite::Vat => properties.extend(vat_suite(trials, seed)),
            Suite::Spans => {
                let (p, c) = span_suite(trials, seed, gens);
                properties.extend(p);
                convergence.extend(c);
            }
        }
    }
    Ok(VerifyReport {
        suites: suites.iter().map(|s| s.name()).collect(),
        trials,
        seed,
        properties,
        convergence,
    })
}

/// [`run`] with the built-in generators.
pub fn run_builtin(selection: SuiteSelection, trials: usize, seed: u64) -> Result<VerifyReport> {
    let gens = builtin_generators();
    let refs: Vec<&dyn Generator> = gens.iter().map(|g| g as &dyn Generator).collect();
    run(selection, trials, seed, &refs)
}
