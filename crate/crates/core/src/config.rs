//! Flat `key = value` run configuration for `pdr-lab train`, and the metrics
//! document a run produces.
//!
//! ```text
//! # comments start with '#'
//! data.train = train.csv
//! model.hidden = 16,16
//! regularizer.kind = vat
//! regularizer.divergence = JSD
//! regularizer.alpha = 1
//! perturbation.radius = 0.2
//! eval.test = test.csv
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::data::{read_csv, withhold_labels, Dataset, SplitSpec};
use crate::divergences::GeneratorKind;
use crate::error::{Error, Result};
use crate::model::MlpModel;
use crate::regularizers::{NormKind, RegularizerKind};
use crate::tensor::RandomSource;
use crate::trainer::{
    train, AdamConfig, EpochRecord, EvalSet, Optimizer, Schedule, TrainConfig, TrainRun,
};

/// Stream used for weight initialization.
pub const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub label_fraction: Option<f64>,
    pub label_seed: Option<u64>,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub eval_paths: BTreeMap<String, PathBuf>,
}

/// Every key a config file may set.
pub const CONFIG_KEYS: &[&str] = &[
    "data.train",
    "data.label_fraction",
    "data.label_seed",
    "model.hidden",
    "optimizer.kind",
    "optimizer.lr",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "optimizer.schedule",
    "regularizer.kind",
    "regularizer.divergence",
    "regularizer.alpha",
    "regularizer.through_clean",
    "regularizer.swap",
    "perturbation.radius",
    "perturbation.norm",
    "perturbation.steps",
    "perturbation.eta",
    "perturbation.init_std",
    "perturbation.samples",
    "seed",
    "epochs",
    "batch_size",
];

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| bad(key, format!("cannot parse `{raw}`")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got `{raw}`"))),
    }
}

fn parse_hidden(key: &str, raw: &str) -> Result<Vec<usize>> {
    if raw.trim().is_empty() || raw.trim() == "none" {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            let v: usize = value(key, s.trim())?;
            if v == 0 {
                Err(bad(key, "hidden widths must be >= 1"))
            } else {
                Ok(v)
            }
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path, source: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim().to_string();
            if !k.starts_with("eval.") && !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(bad(&k, "unknown key"));
            }
            if entries.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(bad(&k, "set more than once"));
            }
        }
        let get = |k: &str| entries.get(k).map(|(_, v)| v.as_str());
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };

        let train_path = resolve(get("data.train").ok_or_else(|| bad("data.train", "required"))?);
        let label_fraction = get("data.label_fraction")
            .map(|v| value::<f64>("data.label_fraction", v))
            .transpose()?;
        if let Some(f) = label_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad("data.label_fraction", "must be in (0, 1]"));
            }
        }
        let label_seed = get("data.label_seed").map(|v| value("data.label_seed", v)).transpose()?;
        let hidden = match get("model.hidden") {
            Some(v) => parse_hidden("model.hidden", v)?,
            None => vec![16],
        };

        let mut cfg = TrainConfig::default();
        if let Some(v) = get("seed") {
            cfg.seed = value("seed", v)?;
        }
        if let Some(v) = get("epochs") {
            cfg.epochs = value("epochs", v)?;
            if cfg.epochs == 0 {
                return Err(bad("epochs", "must be >= 1"));
            }
        }
        if let Some(v) = get("batch_size") {
            cfg.batch_size = value("batch_size", v)?;
            if cfg.batch_size == 0 {
                return Err(bad("batch_size", "must be >= 1"));
            }
        }
        if let Some(v) = get("optimizer.lr") {
            cfg.learning_rate = value("optimizer.lr", v)?;
            if !(cfg.learning_rate > 0.0) {
                return Err(bad("optimizer.lr", "must be > 0"));
            }
        }
        let mut adam = AdamConfig::default();
        for (key, slot) in [
            ("optimizer.beta1", &mut adam.beta1),
            ("optimizer.beta2", &mut adam.beta2),
            ("optimizer.eps", &mut adam.eps),
        ] {
            if let Some(v) = get(key) {
                *slot = value(key, v)?;
            }
        }
        if !(0.0..1.0).contains(&adam.beta1) {
            return Err(bad("optimizer.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&adam.beta2) {
            return Err(bad("optimizer.beta2", "must be in [0, 1)"));
        }
        if !(adam.eps > 0.0) {
            return Err(bad("optimizer.eps", "must be > 0"));
        }
        cfg.optimizer = match get("optimizer.kind").unwrap_or("adam").to_ascii_lowercase().as_str() {
            "adam" => Optimizer::Adam(adam),
            "sgd" => Optimizer::Sgd,
            other => return Err(bad("optimizer.kind", format!("unknown optimizer `{other}`"))),
        };
        cfg.schedule = match get("optimizer.schedule").unwrap_or("constant") {
            "constant" => Schedule::Constant,
            "linear-decay" | "linear_decay" => Schedule::LinearDecay,
            other => return Err(bad("optimizer.schedule", format!("unknown schedule `{other}`"))),
        };

        let reg = &mut cfg.regularizer;
        if let Some(v) = get("regularizer.kind") {
            reg.kind = RegularizerKind::from_str(v).map_err(|e| bad("regularizer.kind", e.to_string()))?;
        }
        if let Some(v) = get("regularizer.divergence") {
            reg.divergence =
                GeneratorKind::from_str(v).map_err(|e| bad("regularizer.divergence", e.to_string()))?;
        }
        reg.alpha = match get("regularizer.alpha") {
            Some(v) => value("regularizer.alpha", v)?,
            None if reg.kind == RegularizerKind::None => 0.0,
            None => 1.0,
        };
        if !(reg.alpha >= 0.0) || !reg.alpha.is_finite() {
            return Err(bad("regularizer.alpha", "must be >= 0"));
        }
        if let Some(v) = get("regularizer.through_clean") {
            reg.through_clean = flag("regularizer.through_clean", v)?;
        }
        if let Some(v) = get("regularizer.swap") {
            reg.swap_arguments = flag("regularizer.swap", v)?;
        }
        let p = &mut reg.perturbation;
        if let Some(v) = get("perturbation.radius") {
            p.radius = value("perturbation.radius", v)?;
        }
        if let Some(v) = get("perturbation.norm") {
            p.norm = NormKind::from_str(v).map_err(|e| bad("perturbation.norm", e.to_string()))?;
        }
        if let Some(v) = get("perturbation.steps") {
            p.ascent_steps = value("perturbation.steps", v)?;
        }
        if let Some(v) = get("perturbation.eta") {
            p.step_size = value("perturbation.eta", v)?;
        }
        if let Some(v) = get("perturbation.init_std") {
            p.init_std = value("perturbation.init_std", v)?;
        }
        if let Some(v) = get("perturbation.samples") {
            p.samples_per_example = value("perturbation.samples", v)?;
        }
        for (key, v) in [
            ("perturbation.radius", p.radius),
            ("perturbation.eta", p.step_size),
            ("perturbation.init_std", p.init_std),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad(key, "must be > 0"));
            }
        }
        if p.samples_per_example == 0 {
            return Err(bad("perturbation.samples", "must be >= 1"));
        }

        let eval_paths = entries
            .iter()
            .filter_map(|(k, (_, v))| k.strip_prefix("eval.").map(|name| (name, v)))
            .map(|(name, v)| {
                if name.is_empty() {
                    Err(bad("eval.", "eval set needs a name"))
                } else {
                    Ok((name.to_string(), resolve(v)))
                }
            })
            .collect::<Result<_>>()?;

        Ok(RunConfig {
            train_path,
            label_fraction,
            label_seed,
            hidden,
            train: cfg,
            eval_paths,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base, &path.display().to_string())
    }

    /// Every key with defaults filled in, in file syntax order.
    pub fn resolved(&self) -> ResolvedConfig {
        let t = &self.train;
        let r = &t.regularizer;
        let (kind, adam) = match t.optimizer {
            Optimizer::Adam(a) => ("adam", a),
            Optimizer::Sgd => ("sgd", AdamConfig::default()),
        };
        ResolvedConfig {
            data_train: self.train_path.display().to_string(),
            data_label_fraction: self.label_fraction.unwrap_or(1.0),
            data_label_seed: self.label_seed.unwrap_or(t.seed),
            model_hidden: self.hidden.clone(),
            optimizer_kind: kind.to_string(),
            optimizer_lr: t.learning_rate,
            optimizer_beta1: adam.beta1,
            optimizer_beta2: adam.beta2,
            optimizer_eps: adam.eps,
            optimizer_schedule: match t.schedule {
                Schedule::Constant => "constant".into(),
                Schedule::LinearDecay => "linear-decay".into(),
            },
            regularizer_kind: r.kind.to_string(),
            regularizer_divergence: r.divergence.to_string(),
            regularizer_alpha: r.alpha,
            regularizer_through_clean: r.through_clean,
            regularizer_swap: r.swap_arguments,
            perturbation_radius: r.perturbation.radius,
            perturbation_norm: r.perturbation.norm.to_string(),
            perturbation_steps: r.perturbation.ascent_steps,
            perturbation_eta: r.perturbation.step_size,
            perturbation_init_std: r.perturbation.init_std,
            perturbation_samples: r.perturbation.samples_per_example,
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval: self
                .eval_paths
                .iter()
                .map(|(k, v)| (k.clone(), v.display().to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    #[serde(rename = "data.train")]
    pub data_train: String,
    #[serde(rename = "data.label_fraction")]
    pub data_label_fraction: f64,
    #[serde(rename = "data.label_seed")]
    pub data_label_seed: u64,
    #[serde(rename = "model.hidden")]
    pub model_hidden: Vec<usize>,
    #[serde(rename = "optimizer.kind")]
    pub optimizer_kind: String,
    #[serde(rename = "optimizer.lr")]
    pub optimizer_lr: f64,
    #[serde(rename = "optimizer.beta1")]
    pub optimizer_beta1: f64,
    #[serde(rename = "optimizer.beta2")]
    pub optimizer_beta2: f64,
    #[serde(rename = "optimizer.eps")]
    pub optimizer_eps: f64,
    #[serde(rename = "optimizer.schedule")]
    pub optimizer_schedule: String,
    #[serde(rename = "regularizer.kind")]
    pub regularizer_kind: String,
    #[serde(rename = "regularizer.divergence")]
    pub regularizer_divergence: String,
    #[serde(rename = "regularizer.alpha")]
    pub regularizer_alpha: f64,
    #[serde(rename = "regularizer.through_clean")]
    pub regularizer_through_clean: bool,
    #[serde(rename = "regularizer.swap")]
    pub regularizer_swap: bool,
    #[serde(rename = "perturbation.radius")]
    pub perturbation_radius: f64,
    #[serde(rename = "perturbation.norm")]
    pub perturbation_norm: String,
    #[serde(rename = "perturbation.steps")]
    pub perturbation_steps: usize,
    #[serde(rename = "perturbation.eta")]
    pub perturbation_eta: f64,
    #[serde(rename = "perturbation.init_std")]
    pub perturbation_init_std: f64,
    #[serde(rename = "perturbation.samples")]
    pub perturbation_samples: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval: BTreeMap<String, String>,
}

/// Datasets and initial model for a run.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub train_set: Dataset,
    pub model: MlpModel,
    pub config: TrainConfig,
}

impl RunConfig {
    pub fn layer_dims(&self, ds: &Dataset) -> Vec<usize> {
        let mut dims = vec![ds.n_features()];
        dims.extend(&self.hidden);
        dims.push(ds.n_classes());
        dims
    }

    pub fn prepare(&self) -> Result<PreparedRun> {
        let mut train_set = read_csv(&self.train_path)?;
        if let Some(f) = self.label_fraction {
            if f < 1.0 {
                let seed = self.label_seed.unwrap_or(self.train.seed);
                train_set = withhold_labels(&train_set, &SplitSpec { label_fraction: f, seed })?;
            }
        }
        let mut config = self.train.clone();
        config.eval_sets = self
            .eval_paths
            .iter()
            .map(|(name, path)| {
                Ok(EvalSet {
                    name: name.clone(),
                    dataset: read_csv(path)?,
                })
            })
            .collect::<Result<_>>()?;
        let mut rng = RandomSource::new(config.seed, INIT_STREAM);
        let model = MlpModel::init(&self.layer_dims(&train_set), &mut rng)?;
        Ok(PreparedRun {
            train_set,
            model,
            config,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenances {
    pub train: String,
    pub eval: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMetrics {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_penalty: f64,
    pub total_loss: f64,
    pub train_accuracy: Option<f64>,
    pub eval_accuracy: BTreeMap<String, f64>,
    pub n_parameters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub config: ResolvedConfig,
    pub provenance: Provenances,
    pub epochs: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl MetricsDocument {
    /// `deterministic` drops `run_id` and `wall_clock_secs`.
    pub fn build(cfg: &RunConfig, prepared: &PreparedRun, run: &TrainRun, deterministic: bool) -> Self {
        let last = run.final_record();
        let run_id = (!deterministic).then(|| {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0);
            format!("{nanos:x}-{}", std::process::id())
        });
        MetricsDocument {
            run_id,
            config: cfg.resolved(),
            provenance: Provenances {
                train: prepared.train_set.provenance().to_string(),
                eval: prepared
                    .config
                    .eval_sets
                    .iter()
                    .map(|e| (e.name.clone(), e.dataset.provenance().to_string()))
                    .collect(),
            },
            epochs: run.records.clone(),
            final_metrics: FinalMetrics {
                epoch: last.epoch,
                mean_ce: last.mean_ce,
                mean_penalty: last.mean_penalty,
                total_loss: last.total_loss,
                train_accuracy: last.train_accuracy,
                eval_accuracy: last.eval_accuracy.clone(),
                n_parameters: run.model.params().len(),
            },
            wall_clock_secs: (!deterministic).then_some(run.wall_clock_secs),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// Loads, trains and returns the run with its prepared inputs.
pub fn run_config(cfg: &RunConfig) -> Result<(PreparedRun, TrainRun)> {
    let prepared = cfg.prepare()?;
    let run = train(&prepared.model, &prepared.train_set, &prepared.config)?;
    Ok((prepared, run))
}
