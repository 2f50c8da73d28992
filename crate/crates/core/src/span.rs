//! Toy extractive span predictor with factorized start/end distributions.
//!
//! Each position `t` is encoded independently as `h_t = tanh(W f_t + b)`;
//! the start and end scores are `w_bᵀh_t` and `w_eᵀh_t`, normalized over
//! positions. Penalties perturb the whole `T × n_feat` feature matrix.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergences::{divergence, generator, Generator};
use crate::error::{check_len, Error, Result};
use crate::regularizers::{
    divergence_adjoints, project_to_ball, quadratic_form, RegularizerKind, RegularizerSpec,
};
use crate::tensor::{
    gaussian_vec, log_sum_exp_unchecked, norm_l2, softmax_unchecked, softmax_vjp, Matrix, RandomSource, Simplex,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanParams {
    /// `hidden × n_features`
    pub w: Matrix,
    pub b: Vec<f64>,
    pub w_start: Vec<f64>,
    pub w_end: Vec<f64>,
}

impl SpanParams {
    pub fn zeros(n_features: usize, hidden: usize) -> Self {
        SpanParams {
            w: Matrix::zeros(hidden, n_features),
            b: vec![0.0; hidden],
            w_start: vec![0.0; hidden],
            w_end: vec![0.0; hidden],
        }
    }

    pub fn zeros_like(&self) -> Self {
        SpanParams::zeros(self.w.cols(), self.w.rows())
    }

    pub fn len(&self) -> usize {
        self.w.as_slice().len() + self.b.len() + self.w_start.len() + self.w_end.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&mut self, mut idx: usize) -> &mut f64 {
        let nw = self.w.as_slice().len();
        if idx < nw {
            return &mut self.w.as_mut_slice()[idx];
        }
        idx -= nw;
        for v in [&mut self.b, &mut self.w_start, &mut self.w_end] {
            if idx < v.len() {
                return &mut v[idx];
            }
            idx -= v.len();
        }
        panic!("span parameter index out of range");
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        *self.iter().nth(idx).expect("span parameter index out of range")
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        *self.slot(idx) = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w
            .as_slice()
            .iter()
            .chain(&self.b)
            .chain(&self.w_start)
            .chain(&self.w_end)
    }

    pub fn add_scaled(&mut self, other: &SpanParams, s: f64) {
        for (a, b) in self.w.as_mut_slice().iter_mut().zip(other.w.as_slice()) {
            *a += s * b;
        }
        for (dst, src) in [
            (&mut self.b, &other.b),
            (&mut self.w_start, &other.w_start),
            (&mut self.w_end, &other.w_end),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += s * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanModel {
    params: SpanParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanExample {
    /// `T × n_features`
    pub features: Matrix,
    pub answer: Option<(usize, usize)>,
}

impl SpanExample {
    pub fn new(features: Matrix, answer: Option<(usize, usize)>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::invalid("span example has no positions"));
        }
        if let Some((s, e)) = answer {
            if s > e || e >= features.rows() {
                return Err(Error::invalid(format!(
                    "answer ({s}, {e}) invalid for {} positions",
                    features.rows()
                )));
            }
        }
        Ok(SpanExample { features, answer })
    }
}

/// Per-position cache for the reverse pass.
#[derive(Debug, Clone)]
pub struct SpanTrace {
    features: Matrix,
    hidden: Matrix,
    start_scores: Vec<f64>,
    end_scores: Vec<f64>,
    pub start: Simplex,
    pub end: Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPenaltyResult {
    pub value: f64,
    pub param_grads: SpanParams,
    /// Flattened row-major perturbation of the feature matrix.
    pub adversarial_direction: Option<Vec<f64>>,
}

/// How the start and end penalties share the input perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanPerturbation {
    #[default]
    Shared,
    Independent,
}

impl SpanModel {
    pub fn zeros(n_features: usize, hidden: usize) -> Result<Self> {
        if n_features == 0 || hidden == 0 {
            return Err(Error::invalid("span model dimensions must be >= 1"));
        }
        Ok(SpanModel {
            params: SpanParams::zeros(n_features, hidden),
        })
    }

    pub fn init(n_features: usize, hidden: usize, rng: &mut RandomSource) -> Result<Self> {
        let mut m = SpanModel::zeros(n_features, hidden)?;
        let sw = (1.0 / n_features as f64).sqrt();
        let sv = (1.0 / hidden as f64).sqrt();
        for v in m.params.w.as_mut_slice() {
            *v = sw * rng.standard_normal();
        }
        for v in m.params.w_start.iter_mut().chain(m.params.w_end.iter_mut()) {
            *v = sv * rng.standard_normal();
        }
        Ok(m)
    }

    pub fn from_params(params: SpanParams) -> Result<Self> {
        let h = params.w.rows();
        if params.w.cols() == 0 || h == 0 {
            return Err(Error::invalid("span model dimensions must be >= 1"));
        }
        check_len("span bias", h, params.b.len())?;
        check_len("start scores", h, params.w_start.len())?;
        check_len("end scores", h, params.w_end.len())?;
        if !params.is_finite() {
            return Err(Error::invalid("span parameters must be finite"));
        }
        Ok(SpanModel { params })
    }

    pub fn params(&self) -> &SpanParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.params.w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.params.w.rows()
    }

    /// `θ ← θ − lr · grads`
    pub fn apply_update(&self, grads: &SpanParams, lr: f64) -> SpanModel {
        let mut params = self.params.clone();
        params.add_scaled(grads, -lr);
        SpanModel { params }
    }

    pub fn trace(&self, features: &Matrix) -> Result<SpanTrace> {
        if features.rows() == 0 {
            return Err(Error::invalid("span input has no positions"));
        }
        check_len("span features", self.n_features(), features.cols())?;
        if !features.is_finite() {
            return Err(Error::invalid("span features must be finite"));
        }
        Ok(self.trace_unchecked(features.clone()))
    }

    fn trace_unchecked(&self, features: Matrix) -> SpanTrace {
        let p = &self.params;
        let t_len = features.rows();
        let mut hidden = Matrix::zeros(t_len, self.hidden());
        let mut sb = Vec::with_capacity(t_len);
        let mut se = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let z = p.w.mul_vec(features.row(t));
            let h = hidden.row_mut(t);
            for ((hi, zi), bi) in h.iter_mut().zip(&z).zip(&p.b) {
                *hi = (zi + bi).tanh();
            }
            sb.push(dot(&p.w_start, h));
            se.push(dot(&p.w_end, h));
        }
        SpanTrace {
            features,
            hidden,
            start: softmax_unchecked(&sb),
            end: softmax_unchecked(&se),
            start_scores: sb,
            end_scores: se,
        }
    }

    /// Reverse pass from adjoints on the start and end score vectors.
    fn backward_scores(
        &self,
        trace: &SpanTrace,
        ds_start: &[f64],
        ds_end: &[f64],
    ) -> (SpanParams, Vec<f64>) {
        let p = &self.params;
        let mut g = p.zeros_like();
        let n_feat = self.n_features();
        let mut dfeat = vec![0.0; trace.features.rows() * n_feat];
        for t in 0..trace.features.rows() {
            let h = trace.hidden.row(t);
            let (db, de) = (ds_start[t], ds_end[t]);
            for (i, &hi) in h.iter().enumerate() {
                g.w_start[i] += db * hi;
                g.w_end[i] += de * hi;
            }
            let dz: Vec<f64> = h
                .iter()
                .enumerate()
                .map(|(i, hi)| (db * p.w_start[i] + de * p.w_end[i]) * (1.0 - hi * hi))
                .collect();
            let f = trace.features.row(t);
            for (r, &d) in dz.iter().enumerate() {
                for (gw, fi) in g.w.row_mut(r).iter_mut().zip(f) {
                    *gw += d * fi;
                }
                g.b[r] += d;
            }
            let df = p.w.t_mul_vec(&dz);
            dfeat[t * n_feat..(t + 1) * n_feat].copy_from_slice(&df);
        }
        (g, dfeat)
    }

    /// `(∂P_b/∂x, ∂P_e/∂x)` as `T × (T·n_feat)` matrices over flattened features.
    pub fn input_jacobians(&self, features: &Matrix) -> Result<(Matrix, Matrix)> {
        let trace = self.trace(features)?;
        Ok(self.jacobians_from_trace(&trace))
    }

    fn jacobians_from_trace(&self, trace: &SpanTrace) -> (Matrix, Matrix) {
        let t_len = trace.features.rows();
        let width = t_len * self.n_features();
        let zeros = vec![0.0; t_len];
        let mut jb = Matrix::zeros(t_len, width);
        let mut je = Matrix::zeros(t_len, width);
        let mut seed = vec![0.0; t_len];
        for k in 0..t_len {
            seed[k] = 1.0;
            let ds = softmax_vjp(trace.start.probs(), &seed);
            jb.row_mut(k).copy_from_slice(&self.backward_scores(trace, &ds, &zeros).1);
            let ds = softmax_vjp(trace.end.probs(), &seed);
            je.row_mut(k).copy_from_slice(&self.backward_scores(trace, &zeros, &ds).1);
            seed[k] = 0.0;
        }
        (jb, je)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn perturbed(features: &Matrix, eps: &[f64]) -> Matrix {
    let data = features.as_slice().iter().zip(eps).map(|(f, e)| f + e).collect();
    Matrix::from_row_major(features.rows(), features.cols(), data).expect("same shape")
}

pub fn span_forward(model: &SpanModel, features: &Matrix) -> Result<(Simplex, Simplex)> {
    let t = model.trace(features)?;
    Ok((t.start, t.end))
}

/// `−ln P_b(start) − ln P_e(end)` with exact parameter gradients.
pub fn span_loss(model: &SpanModel, example: &SpanExample) -> Result<(f64, SpanParams)> {
    let (s, e) = example
        .answer
        .ok_or_else(|| Error::Contract("span_loss called on an unlabeled example".into()))?;
    let trace = model.trace(&example.features)?;
    if e >= trace.start.len() || s > e {
        return Err(Error::invalid(format!("answer ({s}, {e}) out of range")));
    }
    let pb = trace.start.probs();
    let pe = trace.end.probs();
    let loss = log_sum_exp_unchecked(&trace.start_scores) - trace.start_scores[s]
        + log_sum_exp_unchecked(&trace.end_scores)
        - trace.end_scores[e];
    let mut ds_b = pb.to_vec();
    ds_b[s] -= 1.0;
    let mut ds_e = pe.to_vec();
    ds_e[e] -= 1.0;
    let (grads, _) = model.backward_scores(&trace, &ds_b, &ds_e);
    Ok((loss, grads))
}

struct SpanEval {
    value: f64,
    params: SpanParams,
    input_grad: Vec<f64>,
}

/// Weights selecting which of the two divergence terms participate.
#[derive(Clone, Copy)]
struct Terms {
    start: bool,
    end: bool,
}

const BOTH: Terms = Terms { start: true, end: true };

fn eval_span<G: Generator + ?Sized>(
    model: &SpanModel,
    clean: &SpanTrace,
    eps: &[f64],
    g: &G,
    spec: &RegularizerSpec,
    terms: Terms,
    want_clean: bool,
) -> SpanEval {
    let noisy = model.trace_unchecked(perturbed(&clean.features, eps));
    let t_len = clean.start.len();
    let zeros = vec![0.0; t_len];
    let mut value = 0.0;
    let (mut ds_b, mut ds_e) = (zeros.clone(), zeros.clone());
    let (mut cs_b, mut cs_e) = (zeros.clone(), zeros);
    if terms.start {
        let (v, dn, dc) =
            divergence_adjoints(g, noisy.start.probs(), clean.start.probs(), spec.swap_arguments);
        value += v;
        ds_b = softmax_vjp(noisy.start.probs(), &dn);
        cs_b = softmax_vjp(clean.start.probs(), &dc);
    }
    if terms.end {
        let (v, dn, dc) =
            divergence_adjoints(g, noisy.end.probs(), clean.end.probs(), spec.swap_arguments);
        value += v;
        ds_e = softmax_vjp(noisy.end.probs(), &dn);
        cs_e = softmax_vjp(clean.end.probs(), &dc);
    }
    let (mut params, input_grad) = model.backward_scores(&noisy, &ds_b, &ds_e);
    if want_clean && spec.through_clean {
        params.add_scaled(&model.backward_scores(clean, &cs_b, &cs_e).0, 1.0);
    }
    SpanEval {
        value,
        params,
        input_grad,
    }
}

/// Summed start and end divergence at a fixed flattened perturbation.
pub fn span_penalty_at_perturbation(
    model: &SpanModel,
    features: &Matrix,
    spec: &RegularizerSpec,
    eps: &[f64],
) -> Result<SpanPenaltyResult> {
    let clean = model.trace(features)?;
    check_len("span perturbation", features.as_slice().len(), eps.len())?;
    let g = generator(spec.divergence);
    let e = eval_span(model, &clean, eps, &g, spec, BOTH, true);
    Ok(SpanPenaltyResult {
        value: e.value,
        param_grads: e.params,
        adversarial_direction: Some(eps.to_vec()),
    })
}

/// Start and end divergences `(D_b, D_e)` at a fixed perturbation.
pub fn span_divergences_at<G: Generator + ?Sized>(
    model: &SpanModel,
    features: &Matrix,
    g: &G,
    eps: &[f64],
) -> Result<(f64, f64)> {
    let clean = model.trace(features)?;
    check_len("span perturbation", features.as_slice().len(), eps.len())?;
    let noisy = model.trace_unchecked(perturbed(features, eps));
    Ok((
        divergence(g, noisy.start.probs(), clean.start.probs())?,
        divergence(g, noisy.end.probs(), clean.end.probs())?,
    ))
}

/// Sum of the start and end weighted-Jacobian quadratic forms.
pub fn span_quadratic_penalty<G: Generator + ?Sized>(
    model: &SpanModel,
    features: &Matrix,
    g: &G,
    eps: &[f64],
) -> Result<f64> {
    let trace = model.trace(features)?;
    check_len("span perturbation", features.as_slice().len(), eps.len())?;
    let (jb, je) = model.jacobians_from_trace(&trace);
    let c = g.curvature();
    Ok(quadratic_form(&jb, trace.start.probs(), c, eps)
        + quadratic_form(&je, trace.end.probs(), c, eps))
}

fn span_search<G: Generator + ?Sized>(
    model: &SpanModel,
    clean: &SpanTrace,
    g: &G,
    spec: &RegularizerSpec,
    terms: Terms,
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    let cfg = &spec.perturbation;
    let n = clean.features.as_slice().len();
    if spec.kind == RegularizerKind::Rpt {
        return gaussian_vec(rng, n, cfg.radius);
    }
    let mut delta = gaussian_vec(rng, n, cfg.init_std)?;
    for _ in 0..cfg.ascent_steps {
        let e = eval_span(model, clean, &delta, g, spec, terms, false);
        let gn = norm_l2(&e.input_grad);
        if gn < 1e-12 {
            continue;
        }
        for (d, gi) in delta.iter_mut().zip(&e.input_grad) {
            *d += cfg.step_size * gi / gn;
        }
    }
    Ok(project_to_ball(&delta, cfg.radius, cfg.norm))
}

/// RPT or VAT penalty on start and end posteriors with one shared
/// perturbation.
pub fn span_penalty(
    model: &SpanModel,
    features: &Matrix,
    spec: &RegularizerSpec,
    rng: &mut RandomSource,
) -> Result<SpanPenaltyResult> {
    span_penalty_with(model, features, spec, SpanPerturbation::Shared, rng)
}

pub fn span_penalty_with(
    model: &SpanModel,
    features: &Matrix,
    spec: &RegularizerSpec,
    mode: SpanPerturbation,
    rng: &mut RandomSource,
) -> Result<SpanPenaltyResult> {
    match spec.kind {
        RegularizerKind::Rpt | RegularizerKind::Vat => {}
        RegularizerKind::Jr => {
            return Err(Error::Unsupported(
                "Jacobian regularization is not available for span models".into(),
            ))
        }
        RegularizerKind::None => {
            return Err(Error::Contract("span_penalty requires RPT or VAT".into()))
        }
    }
    spec.perturbation.validate()?;
    let clean = model.trace(features)?;
    let g = generator(spec.divergence);
    match mode {
        SpanPerturbation::Shared => {
            let eps = span_search(model, &clean, &g, spec, BOTH, rng)?;
            let e = eval_span(model, &clean, &eps, &g, spec, BOTH, true);
            Ok(SpanPenaltyResult {
                value: e.value,
                param_grads: e.params,
                adversarial_direction: Some(eps),
            })
        }
        SpanPerturbation::Independent => {
            let mut value = 0.0;
            let mut params = model.params.zeros_like();
            for terms in [Terms { start: true, end: false }, Terms { start: false, end: true }] {
                let eps = span_search(model, &clean, &g, spec, terms, rng)?;
                let e = eval_span(model, &clean, &eps, &g, spec, terms, true);
                value += e.value;
                params.add_scaled(&e.params, 1.0);
            }
            Ok(SpanPenaltyResult {
                value,
                param_grads: params,
                adversarial_direction: None,
            })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    features: Vec<Vec<f64>>,
    start: Option<usize>,
    end: Option<usize>,
}

pub fn read_span_jsonl(path: &Path) -> Result<Vec<SpanExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut width = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let answer = match (rec.start, rec.end) {
            (Some(s), Some(e)) => Some((s, e)),
            (None, None) => None,
            _ => return Err(parse_err(line_no, "start and end must both be set or both null".into())),
        };
        let features = Matrix::from_rows(&rec.features).map_err(|e| parse_err(line_no, e.to_string()))?;
        if *width.get_or_insert(features.cols()) != features.cols() {
            return Err(parse_err(line_no, "feature width differs from earlier lines".into()));
        }
        out.push(SpanExample::new(features, answer).map_err(|e| parse_err(line_no, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_span_jsonl(examples: &[SpanExample], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        let rec = SpanRecord {
            features: (0..ex.features.rows()).map(|t| ex.features.row(t).to_vec()).collect(),
            start: ex.answer.map(|a| a.0),
            end: ex.answer.map(|a| a.1),
        };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Random sequences whose answer span is marked by a bump in feature 0.
pub fn gen_span_examples(
    n: usize,
    positions: usize,
    n_features: usize,
    seed: u64,
) -> Result<Vec<SpanExample>> {
    if n == 0 || positions == 0 || n_features == 0 {
        return Err(Error::invalid("span generator needs n, positions, n_features >= 1"));
    }
    let mut rng = RandomSource::new(seed, 0x5A17);
    (0..n)
        .map(|_| {
            let s = rng.index(positions);
            let e = s + rng.index(positions - s);
            let mut f = Matrix::zeros(positions, n_features);
            for t in 0..positions {
                for c in 0..n_features {
                    f.set(t, c, 0.5 * rng.standard_normal());
                }
                if (s..=e).contains(&t) {
                    f.add_at(t, 0, 2.0);
                }
            }
            SpanExample::new(f, Some((s, e)))
        })
        .collect()
}
