//! Smooth feedforward classifier: tanh hidden layers, softmax output.
//!
//! Gradients are hand-written reverse passes over a [`ForwardTrace`]. The
//! input-output Jacobian is the Jacobian of the posterior (softmax folded in),
//! assembled from one vector-Jacobian product per class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tensor::{softmax_unchecked, softmax_vjp, Matrix, RandomSource, Simplex};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Parameter-shaped storage: one weight matrix and one bias vector per layer.
/// Used for gradients, optimizer moments and updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros_for(layer_dims: &[usize]) -> Self {
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_dims.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Params { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    pub(crate) fn ensure_same_shape(&self, other: &Params) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid("parameter shapes do not match"))
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in layer order: weights of layer 0 (row-major), biases of
    /// layer 0, weights of layer 1, ...
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()))
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        *self.iter().nth(idx).expect("flat index in range")
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        *self.iter_mut().nth(idx).expect("flat index in range") = v;
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &Params, s: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.iter_mut() {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    params: Params,
}

/// Everything the reverse pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l]` is the tanh output of
    /// hidden layer `l`.
    pub activations: Vec<Vec<f64>>,
    /// Affine outputs of every layer; the last entry is the logits.
    pub pre_activations: Vec<Vec<f64>>,
    pub posterior: Simplex,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().expect("at least one layer")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub params: Params,
    pub input_grad: Vec<f64>,
}

impl MlpModel {
    /// All-zero weights and biases.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            params: Params::zeros_for(layer_dims),
        })
    }

    /// Weights from `N(0, 1/fan_in)`, zero biases.
    pub fn init(layer_dims: &[usize], rng: &mut RandomSource) -> Result<Self> {
        let mut model = MlpModel::zeros(layer_dims)?;
        for w in &mut model.params.weights {
            let std = 1.0 / (w.cols() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = std * rng.standard_normal();
            }
        }
        Ok(model)
    }

    pub fn from_params(layer_dims: &[usize], params: Params) -> Result<Self> {
        validate_dims(layer_dims)?;
        if !Params::zeros_for(layer_dims).same_shape(&params) {
            return Err(Error::invalid(
                "weight/bias shapes inconsistent with layer_dims",
            ));
        }
        if !params.is_finite() {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.params.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.params.biases
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len("model input", self.n_inputs(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model input must be finite"));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ForwardTrace {
        let n_layers = self.n_layers();
        let mut activations = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        activations.push(x.to_vec());
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = w.mul_vec(activations.last().unwrap());
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if l + 1 < n_layers {
                activations.push(z.iter().map(|v| v.tanh()).collect());
            }
            pre_activations.push(z);
        }
        let posterior = softmax_unchecked(pre_activations.last().unwrap());
        ForwardTrace {
            activations,
            pre_activations,
            posterior,
        }
    }

    /// Posterior only.
    pub fn predict(&self, x: &[f64]) -> Result<Simplex> {
        Ok(self.forward(x)?.posterior)
    }

    /// Reverse pass from an adjoint on the logits.
    pub(crate) fn backward_from_logits(
        &self,
        trace: &ForwardTrace,
        dlogits: Vec<f64>,
        want_params: bool,
    ) -> GradientBundle {
        let n_layers = self.n_layers();
        let mut params = if want_params {
            self.params.zeros_like()
        } else {
            Params {
                weights: Vec::new(),
                biases: Vec::new(),
            }
        };
        let mut dz = dlogits;
        for l in (0..n_layers).rev() {
            let a_prev = &trace.activations[l];
            let w = &self.params.weights[l];
            if want_params {
                let gw = &mut params.weights[l];
                for (r, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &a) in gw.row_mut(r).iter_mut().zip(a_prev) {
                        *g += d * a;
                    }
                }
                params.biases[l].copy_from_slice(&dz);
            }
            let mut da = w.t_mul_vec(&dz);
            if l > 0 {
                for (d, a) in da.iter_mut().zip(a_prev) {
                    *d *= 1.0 - a * a;
                }
            }
            dz = da;
        }
        GradientBundle {
            params,
            input_grad: dz,
        }
    }

    /// Cross-entropy `−ln p[label]` and its exact gradients.
    pub fn backward_ce(&self, trace: &ForwardTrace, label: usize) -> Result<(f64, GradientBundle)> {
        let m = self.n_classes();
        if label >= m {
            return Err(Error::invalid(format!(
                "label {label} out of range for {m} classes"
            )));
        }
        self.check_trace(trace)?;
        let logits = trace.logits();
        let lse = crate::tensor::log_sum_exp_unchecked(logits);
        let loss = lse - logits[label];
        let mut dz = trace.posterior.probs().to_vec();
        dz[label] -= 1.0;
        Ok((loss, self.backward_from_logits(trace, dz, true)))
    }

    /// Vector-Jacobian product: gradient of a scalar `v(posterior)` given
    /// `∂v/∂posterior`.
    pub fn backward_scalar_of_posterior(
        &self,
        trace: &ForwardTrace,
        dvalue_dposterior: &[f64],
    ) -> Result<GradientBundle> {
        check_len("posterior adjoint", self.n_classes(), dvalue_dposterior.len())?;
        self.check_trace(trace)?;
        let dz = softmax_vjp(trace.posterior.probs(), dvalue_dposterior);
        Ok(self.backward_from_logits(trace, dz, true))
    }

    pub(crate) fn input_vjp(&self, trace: &ForwardTrace, dvalue_dposterior: &[f64]) -> Vec<f64> {
        let dz = softmax_vjp(trace.posterior.probs(), dvalue_dposterior);
        self.backward_from_logits(trace, dz, false).input_grad
    }

    /// Exact `m × n` Jacobian of the posterior with respect to the input.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let trace = self.forward(x)?;
        Ok(self.jacobian_from_trace(&trace))
    }

    pub(crate) fn jacobian_from_trace(&self, trace: &ForwardTrace) -> Matrix {
        let (m, n) = (self.n_classes(), self.n_inputs());
        let mut j = Matrix::zeros(m, n);
        let mut seed = vec![0.0; m];
        for k in 0..m {
            seed[k] = 1.0;
            let row = self.input_vjp(trace, &seed);
            j.row_mut(k).copy_from_slice(&row);
            seed[k] = 0.0;
        }
        j
    }

    /// `θ ← θ − scale · delta`, returning a new model.
    pub fn apply_update(&self, delta: &Params, scale: f64) -> Result<MlpModel> {
        self.params.ensure_same_shape(delta)?;
        let mut params = self.params.clone();
        params.add_scaled(delta, -scale);
        if !params.is_finite() {
            return Err(Error::invalid("update produced non-finite parameters"));
        }
        Ok(MlpModel {
            layer_dims: self.layer_dims.clone(),
            params,
        })
    }

    /// Scales every parameter of the final layer.
    pub fn with_final_layer_scaled(&self, s: f64) -> MlpModel {
        let mut out = self.clone();
        let last = out.params.weights.len() - 1;
        for v in out.params.weights[last].as_mut_slice() {
            *v *= s;
        }
        for v in &mut out.params.biases[last] {
            *v *= s;
        }
        out
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.pre_activations.len() != self.n_layers()
            || trace.activations.first().map(Vec::len) != Some(self.n_inputs())
            || trace.posterior.len() != self.n_classes()
        {
            return Err(Error::invalid("trace was not produced by this model"));
        }
        Ok(())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            weights: self
                .params
                .weights
                .iter()
                .map(|w| w.as_slice().to_vec())
                .collect(),
            biases: self.params.biases.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        validate_dims(&doc.layer_dims)?;
        check_len("weight layers", doc.layer_dims.len() - 1, doc.weights.len())?;
        check_len("bias layers", doc.layer_dims.len() - 1, doc.biases.len())?;
        let weights = doc
            .layer_dims
            .windows(2)
            .zip(doc.weights)
            .map(|(d, w)| Matrix::from_row_major(d[1], d[0], w))
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_params(
            &doc.layer_dims,
            Params {
                weights,
                biases: doc.biases,
            },
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        MlpModel::from_document(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MlpModel::from_json(&s)
    }
}

/// Versioned on-disk form; weights are row-major arrays, one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(
            "layer_dims needs at least input and output sizes",
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, gaussian_vec, norm_l2};

    fn random_model(seed: u64, dims: &[usize], weight_scale: f64) -> MlpModel {
        let mut rng = RandomSource::new(seed, 1);
        let mut m = MlpModel::init(dims, &mut rng).unwrap();
        m.params.scale(weight_scale);
        for b in &mut m.params.biases {
            for v in b.iter_mut() {
                *v = 0.3 * rng.standard_normal();
            }
        }
        m
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(&[3, 4, 5]).unwrap();
        let p = m.predict(&[1.0, -2.0, 0.5]).unwrap();
        for v in p.probs() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let (loss, _) = m.backward_ce(&m.forward(&[0.0; 3]).unwrap(), 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert_eq!(m.input_jacobian(&[0.3, 0.1, 0.2]).unwrap(), Matrix::zeros(5, 3));
    }

    #[test]
    fn linear_identity_model() {
        let params = Params {
            weights: vec![Matrix::identity(2)],
            biases: vec![vec![0.0, 0.0]],
        };
        let m = MlpModel::from_params(&[2, 2], params).unwrap();
        let p = m.predict(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p.probs()[0] - 0.25).abs() < 1e-15);
        assert!((p.probs()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_label_errors() {
        let m = MlpModel::zeros(&[2, 3]).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.forward(&[1.0, f64::NAN]).is_err());
        let t = m.forward(&[1.0, 2.0]).unwrap();
        assert!(m.backward_ce(&t, 3).is_err());
        assert!(m.backward_scalar_of_posterior(&t, &[1.0]).is_err());
        assert!(MlpModel::zeros(&[2]).is_err());
    }

    #[test]
    fn trace_replay_is_exact() {
        let m = random_model(3, &[3, 5, 4], 1.0);
        let t = m.forward(&[0.2, -0.4, 1.1]).unwrap();
        assert_eq!(softmax_unchecked(t.logits()), t.posterior);
        for (a, z) in t.activations[1..].iter().zip(&t.pre_activations) {
            let replay: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            assert_eq!(&replay, a);
        }
    }

    #[test]
    fn ce_gradients_match_finite_differences() {
        let mut rng = RandomSource::new(100, 0);
        for trial in 0..50 {
            let dims = [1 + rng.index(4), 1 + rng.index(4), 2 + rng.index(3)];
            let m = random_model(trial, &dims, 1.5);
            let x = gaussian_vec(&mut rng, dims[0], 1.0).unwrap();
            let label = rng.index(dims[2]);
            let (_, g) = m.backward_ce(&m.forward(&x).unwrap(), label).unwrap();
            let loss = |mm: &MlpModel, xx: &[f64]| mm.backward_ce(&mm.forward(xx).unwrap(), label).unwrap().0;
            let h = 1e-6;
            for idx in 0..m.params.len() {
                let mut up = m.clone();
                let mut dn = m.clone();
                up.params.set_flat(idx, m.params.get_flat(idx) + h);
                dn.params.set_flat(idx, m.params.get_flat(idx) - h);
                let fd = (loss(&up, &x) - loss(&dn, &x)) / (2.0 * h);
                assert!(rel_err(fd, g.params.get_flat(idx)) < 1e-5, "param {idx}: {fd} vs {}", g.params.get_flat(idx));
            }
            for i in 0..x.len() {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (loss(&m, &up) - loss(&m, &dn)) / (2.0 * h);
                assert!(rel_err(fd, g.input_grad[i]) < 1e-5);
            }
        }
    }

    #[test]
    fn vjp_properties() {
        let m = random_model(5, &[3, 4, 3], 1.0);
        let x = [0.1, 0.7, -0.3];
        let t = m.forward(&x).unwrap();
        let zero = m.backward_scalar_of_posterior(&t, &[0.0; 3]).unwrap();
        assert!(zero.params.iter().all(|v| *v == 0.0));
        assert!(zero.input_grad.iter().all(|v| *v == 0.0));
        let j = m.input_jacobian(&x).unwrap();
        let row1 = m.backward_scalar_of_posterior(&t, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(row1.input_grad.as_slice(), j.row(1));
    }

    #[test]
    fn single_layer_jacobian_closed_form() {
        let m = random_model(6, &[4, 3], 2.0);
        let x = [0.5, -1.0, 0.25, 2.0];
        let p = m.predict(&x).unwrap().into_vec();
        let mut s = Matrix::zeros(3, 3);
        for i in 0..3 {
            for k in 0..3 {
                s.set(i, k, if i == k { p[i] } else { 0.0 } - p[i] * p[k]);
            }
        }
        let closed = s.matmul(&m.weights()[0]);
        let j = m.input_jacobian(&x).unwrap();
        for (a, b) in j.as_slice().iter().zip(closed.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_columns_match_finite_differences() {
        let mut rng = RandomSource::new(7, 0);
        for trial in 0..30 {
            let m = random_model(trial + 10, &[3, 6, 5, 4], 1.2);
            let x = gaussian_vec(&mut rng, 3, 1.0).unwrap();
            let j = m.input_jacobian(&x).unwrap();
            let h = 1e-5;
            for c in 0..3 {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[c] += h;
                dn[c] -= h;
                let pu = m.predict(&up).unwrap();
                let pd = m.predict(&dn).unwrap();
                for r in 0..4 {
                    let fd = (pu.probs()[r] - pd.probs()[r]) / (2.0 * h);
                    assert!((fd - j.get(r, c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn first_order_taylor_ratio_is_stable() {
        let m = random_model(12, &[4, 8, 3], 1.0);
        let x = [0.3, -0.2, 0.9, 0.1];
        let j = m.input_jacobian(&x).unwrap();
        let p = m.predict(&x).unwrap();
        let dir = [0.6, -0.3, 0.2, 0.7];
        let constant = |t: f64| {
            let eps: Vec<f64> = dir.iter().map(|d| d * t).collect();
            let xe: Vec<f64> = x.iter().zip(&eps).map(|(a, b)| a + b).collect();
            let pe = m.predict(&xe).unwrap();
            let je = j.mul_vec(&eps);
            let resid: Vec<f64> = (0..3).map(|i| pe.probs()[i] - p.probs()[i] - je[i]).collect();
            norm_l2(&resid) / dot(&eps, &eps)
        };
        let c1 = constant(1e-2);
        let c2 = constant(1e-3);
        assert!((c1 / c2 - 1.0).abs() < 0.05, "{c1} {c2}");
    }

    #[test]
    fn apply_update_semantics() {
        let m = random_model(1, &[2, 3, 2], 1.0);
        let zero = m.params.zeros_like();
        assert_eq!(m.apply_update(&zero, 0.5).unwrap(), m);
        let x = [0.4, -0.7];
        let lin = random_model(2, &[2, 2], 1.0);
        let (loss0, g) = lin.backward_ce(&lin.forward(&x).unwrap(), 1).unwrap();
        let next = lin.apply_update(&g.params, 1e-3).unwrap();
        let (loss1, _) = next.backward_ce(&next.forward(&x).unwrap(), 1).unwrap();
        assert!(loss1 < loss0);
        let wrong = Params::zeros_for(&[3, 2]);
        assert!(m.apply_update(&wrong, 1.0).is_err());
    }

    #[test]
    fn repeated_updates_stay_finite() {
        let mut m = random_model(4, &[2, 8, 3], 1.0);
        let mut rng = RandomSource::new(4, 9);
        for _ in 0..2000 {
            let x = gaussian_vec(&mut rng, 2, 3.0).unwrap();
            let (_, g) = m.backward_ce(&m.forward(&x).unwrap(), rng.index(3)).unwrap();
            m = m.apply_update(&g.params, 0.5).unwrap();
        }
        assert!(m.params.is_finite());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = random_model(77, &[3, 5, 2], 1.0);
        let back = MlpModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let doc: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(doc["format_version"], 1);
        assert_eq!(doc["weights"][0].as_array().unwrap().len(), 15);
    }

    #[test]
    fn json_rejects_bad_documents() {
        let mut doc = MlpModel::zeros(&[2, 2]).unwrap().to_document();
        doc.format_version = 2;
        assert!(MlpModel::from_document(doc.clone()).is_err());
        doc.format_version = 1;
        doc.weights[0].pop();
        assert!(MlpModel::from_document(doc).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = random_model(9, &[3, 4, 2], 1.0);
        let a = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        let b = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a.posterior, b.posterior);
    }
}
