//! Mini-batch training of `mean CE + α · mean penalty` with SGD or Adam.
//!
//! Per batch, labeled examples contribute cross-entropy and every example
//! contributes the penalty. Each term is averaged over the examples it
//! covers. The shuffle and the perturbation noise use separate random
//! streams, and the noise stream for an example depends only on
//! `(seed, epoch, index)`. A run is therefore a pure function of the
//! configuration and the initial model.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::model::{MlpModel, Params};
use crate::regularizers::{penalty, RegularizerSpec};
use crate::tensor::RandomSource;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const SHUFFLE_STREAM: u64 = 0x5348;
const NOISE_STREAM: u64 = 0x4E4F;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam(AdamConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Learning rate falls linearly to zero over the run.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub name: String,
    pub dataset: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub regularizer: RegularizerSpec,
    pub seed: u64,
    pub eval_sets: Vec<EvalSet>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 32,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            schedule: Schedule::Constant,
            regularizer: RegularizerSpec::none(),
            seed: 0,
            eval_sets: Vec::new(),
        }
    }
}

/// Serializable view of a [`TrainConfig`]; eval sets appear by name and
/// provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfigEcho {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub regularizer: RegularizerSpec,
    pub seed: u64,
    pub eval_sets: BTreeMap<String, String>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if let Optimizer::Adam(a) = self.optimizer {
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return Err(Error::invalid("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        self.regularizer.validate()
    }

    pub fn echo(&self) -> TrainConfigEcho {
        TrainConfigEcho {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            schedule: self.schedule,
            regularizer: self.regularizer.clone(),
            seed: self.seed,
            eval_sets: self
                .eval_sets
                .iter()
                .map(|e| (e.name.clone(), e.dataset.provenance().to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns the new state and the step to
/// subtract from the parameters.
pub fn adam_step(
    state: &AdamState,
    grads: &Params,
    cfg: &AdamConfig,
    learning_rate: f64,
) -> Result<(AdamState, Params)> {
    if !state.m.same_shape(grads) || !state.v.same_shape(grads) {
        return Err(Error::invalid("adam state and gradients differ in shape"));
    }
    let t = state.t + 1;
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut step = grads.zeros_like();
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for (((mi, vi), si), gi) in m.iter_mut().zip(v.iter_mut()).zip(step.iter_mut()).zip(grads.iter()) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *si = learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok((AdamState { m, v, t }, step))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_ce: f64,
    pub n_labeled: usize,
}

/// Accuracy (argmax, ties to the lowest class) and mean CE over labeled
/// examples.
pub fn evaluate(model: &MlpModel, dataset: &Dataset) -> Result<Evaluation> {
    check_dims(model, dataset)?;
    let mut correct = 0usize;
    let mut ce = 0.0;
    let mut n = 0usize;
    for ex in dataset.examples() {
        let Label::Class(c) = ex.label else { continue };
        let trace = model.forward(&ex.features)?;
        if trace.posterior.argmax() == c {
            correct += 1;
        }
        let logits = trace.logits();
        ce += crate::tensor::log_sum_exp(logits)? - logits[c];
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("evaluation set has no labeled examples"));
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        mean_ce: ce / n as f64,
        n_labeled: n,
    })
}

fn check_dims(model: &MlpModel, ds: &Dataset) -> Result<()> {
    if model.n_inputs() != ds.n_features() {
        return Err(Error::DimensionMismatch {
            what: "model inputs vs dataset features",
            expected: model.n_inputs(),
            found: ds.n_features(),
        });
    }
    if model.n_classes() != ds.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "model classes vs dataset classes",
            expected: model.n_classes(),
            found: ds.n_classes(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_penalty: f64,
    pub total_loss: f64,
    /// `None` when the training set has no labels.
    pub train_accuracy: Option<f64>,
    pub eval_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfigEcho,
    pub records: Vec<EpochRecord>,
    pub model: MlpModel,
    pub wall_clock_secs: f64,
}

impl TrainRun {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("epochs >= 1")
    }
}

/// Id of the noise stream for one example visit.
fn noise_id(epoch: usize, index: usize) -> u64 {
    ((epoch as u64) << 32) | index as u64
}

pub fn train(model0: &MlpModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    let start = Instant::now();
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_dims(model0, dataset)?;
    for e in &cfg.eval_sets {
        check_dims(model0, &e.dataset)?;
        if e.dataset.n_labeled() == 0 {
            return Err(Error::invalid(format!("eval set `{}` has no labels", e.name)));
        }
    }
    let spec = &cfg.regularizer;
    let active = spec.is_active();
    let alpha = spec.effective_alpha();
    let n_labeled_total = dataset.n_labeled();
    if n_labeled_total == 0 && !active {
        return Err(Error::DegenerateObjective(
            "no labeled examples and no active regularizer".into(),
        ));
    }

    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs) as f64;
    let mut model = model0.clone();
    let mut adam = AdamState::new(model.params());
    let mut shuffle_rng = RandomSource::new(cfg.seed, SHUFFLE_STREAM);
    let noise_root = RandomSource::new(cfg.seed, NOISE_STREAM);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step_no = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_rng.shuffle(&mut order);
        let mut ce_sum = 0.0;
        let mut pen_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut ce_grads = model.params().zeros_like();
            let mut pen_grads = model.params().zeros_like();
            let mut n_lab = 0usize;
            for &i in batch {
                let ex = &dataset.examples()[i];
                if let Label::Class(c) = ex.label {
                    let trace = model.forward(&ex.features)?;
                    let (loss, g) = model.backward_ce(&trace, c)?;
                    ce_sum += loss;
                    ce_grads.add_scaled(&g.params, 1.0);
                    n_lab += 1;
                }
                if active {
                    let mut rng = noise_root.split(noise_id(epoch, i));
                    let p = penalty(&model, &ex.features, spec, &mut rng)?;
                    pen_sum += p.value;
                    pen_grads.add_scaled(&p.param_grads, 1.0);
                }
            }
            let mut grads = model.params().zeros_like();
            if n_lab > 0 {
                grads.add_scaled(&ce_grads, 1.0 / n_lab as f64);
            }
            if active {
                grads.add_scaled(&pen_grads, alpha / batch.len() as f64);
            }
            let lr = match cfg.schedule {
                Schedule::Constant => cfg.learning_rate,
                Schedule::LinearDecay => cfg.learning_rate * (1.0 - step_no as f64 / total_steps),
            };
            model = match cfg.optimizer {
                Optimizer::Sgd => model.apply_update(&grads, lr)?,
                Optimizer::Adam(a) => {
                    let (next, step) = adam_step(&adam, &grads, &a, lr)?;
                    adam = next;
                    model.apply_update(&step, 1.0)?
                }
            };
            step_no += 1;
        }
        let mean_ce = if n_labeled_total > 0 { ce_sum / n_labeled_total as f64 } else { 0.0 };
        let mean_penalty = pen_sum / n as f64;
        let train_accuracy = if n_labeled_total > 0 {
            Some(evaluate(&model, dataset)?.accuracy)
        } else {
            None
        };
        let mut eval_accuracy = BTreeMap::new();
        for e in &cfg.eval_sets {
            eval_accuracy.insert(e.name.clone(), evaluate(&model, &e.dataset)?.accuracy);
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            mean_ce,
            mean_penalty,
            total_loss: mean_ce + alpha * mean_penalty,
            train_accuracy,
            eval_accuracy,
        });
    }
    Ok(TrainRun {
        config: cfg.echo(),
        records,
        model,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Mean `‖J‖²_F` of the posterior Jacobian over a dataset's inputs.
pub fn mean_jacobian_norm(model: &MlpModel, dataset: &Dataset) -> Result<f64> {
    check_dims(model, dataset)?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut s = 0.0;
    for ex in dataset.examples() {
        s += model.input_jacobian(&ex.features)?.frobenius_norm_sq();
    }
    Ok(s / dataset.len() as f64)
}
