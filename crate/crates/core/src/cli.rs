//! The `pdr-lab` command line.
//!
//! [`run`] is the whole program minus process exit, so tests can drive it
//! with in-memory writers.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{MetricsDocument, RunConfig};
use crate::data::{
    apply_domain_shift, gen_gaussian_mixture, gen_spurious_bias_pair_with, gen_two_moons, read_csv,
    write_csv, Dataset, SPURIOUS_AMPLITUDE,
};
use crate::divergences::{divergence, generator, Generator, GeneratorKind};
use crate::error::Error;
use crate::model::MlpModel;
use crate::span::{gen_span_examples, write_span_jsonl};
use crate::tensor::Simplex;
use crate::trainer::{evaluate, TrainRun};
use crate::verify::{self, sig12, SuiteSelection};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable capping `verify` worker threads (0 = automatic).
pub const THREADS_ENV: &str = "PDR_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pdr-lab",
    version,
    about = "Posterior differential regularization lab: JR, RPT and VAT with f-divergences",
    after_help = "Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (CSV, or JSONL for spans).
    GenData(GenDataArgs),
    /// Train a model from a config file and write metrics JSON.
    #[command(after_long_help = config_reference())]
    Train(TrainArgs),
    /// Evaluate a saved model on a CSV dataset.
    Eval(EvalArgs),
    /// Compute D_g(p, q) for two probability vectors.
    Divergence(DivergenceArgs),
    /// Run the property suites and report worst-case margins.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DataKind {
    TwoMoons,
    GaussianMixture,
    BiasPair,
    Spans,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator.
    #[arg(long, value_enum)]
    pub kind: DataKind,
    /// Number of examples (per file for bias-pair).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Gaussian noise std (two-moons noise, bias-pair core noise).
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Mean separation for gaussian-mixture.
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Number of classes for gaussian-mixture.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature dimension for gaussian-mixture and spans.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Spurious-feature amplitude for bias-pair.
    #[arg(long, default_value_t = SPURIOUS_AMPLITUDE)]
    pub amplitude: f64,
    /// Sequence length for spans.
    #[arg(long, default_value_t = 8)]
    pub positions: usize,
    /// Rotation angle (radians) of an optional domain shift.
    #[arg(long, default_value_t = 0.0)]
    pub shift_angle: f64,
    /// Scale of an optional domain shift.
    #[arg(long, default_value_t = 1.0)]
    pub shift_scale: f64,
    /// Seed for the domain-shift plane.
    #[arg(long, default_value_t = 0)]
    pub shift_seed: u64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path (all kinds except bias-pair).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training split output (bias-pair).
    #[arg(long)]
    pub out_train: Option<PathBuf>,
    /// Adversarial split output (bias-pair).
    #[arg(long)]
    pub out_adv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file (`key = value` lines; see below).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics JSON output.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Also write the trained model as JSON.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Omit `run_id` and `wall_clock_secs` so reruns are byte-identical.
    #[arg(long, default_value_t = false)]
    pub deterministic_output: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model JSON written by `train --save-model`.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled CSV dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DivergenceArgs {
    /// Generator: KL, RKL, SHL or JSD.
    #[arg(long, default_value = "KL")]
    pub kind: String,
    /// First argument, comma-separated probabilities.
    #[arg(long, allow_hyphen_values = true)]
    pub p: String,
    /// Second argument, comma-separated probabilities.
    #[arg(long, allow_hyphen_values = true)]
    pub q: String,
    /// Compute D_g(q, p) instead.
    #[arg(long, default_value_t = false)]
    pub swap: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// divergence, jacobian, vat, spans or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Random instances per suite.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Root seed; trial i uses an independent stream derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config keys, defaults and meanings, rendered for `train --help`.
pub fn config_reference() -> String {
    let defaults = RunConfig::parse("data.train = <required>", Path::new(""), "defaults")
        .expect("minimal config parses")
        .resolved();
    let values = serde_json::to_value(&defaults).expect("resolved config serializes");
    let describe = |key: &str| match key {
        "data.train" => "training CSV (required; relative to the config file)",
        "data.label_fraction" => "fraction of labels kept, stratified",
        "data.label_seed" => "seed for label withholding (defaults to seed)",
        "model.hidden" => "comma-separated tanh hidden widths",
        "optimizer.kind" => "adam or sgd",
        "optimizer.lr" => "learning rate",
        "optimizer.beta1" | "optimizer.beta2" | "optimizer.eps" => "Adam constants",
        "optimizer.schedule" => "constant or linear-decay",
        "regularizer.kind" => "none, jr, rpt or vat",
        "regularizer.divergence" => "KL, RKL, SHL or JSD",
        "regularizer.alpha" => "penalty weight (1 when a regularizer is set)",
        "regularizer.through_clean" => "let gradients flow through f(x)",
        "regularizer.swap" => "use D(f(x), f(x+e)) instead of D(f(x+e), f(x))",
        "perturbation.radius" => "radius c",
        "perturbation.norm" => "l2 or linf",
        "perturbation.steps" => "VAT ascent steps K",
        "perturbation.eta" => "VAT ascent step size",
        "perturbation.init_std" => "std of the VAT random start",
        "perturbation.samples" => "RPT noise draws per example",
        "seed" => "shuffling, noise and init seed",
        "epochs" => "passes over the training set",
        "batch_size" => "examples per step",
        _ => "",
    };
    let mut s = String::from("Config keys (defaults in brackets):\n");
    for (key, v) in values.as_object().expect("object") {
        if key == "eval" {
            continue;
        }
        let shown = match key.as_str() {
            "regularizer.alpha" => "0 for none, 1 otherwise".to_string(),
            _ => v.to_string().trim_matches('"').to_string(),
        };
        s.push_str(&format!("  {key:<28} {} [{shown}]\n", describe(key)));
    }
    s.push_str("  eval.NAME                    extra CSV evaluated every epoch under NAME\n");
    s
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

/// I/O is a runtime failure; anything else about the inputs is usage.
fn classify(e: Error) -> Failure {
    match e {
        Error::Io { .. } => Failure::runtime(e.to_string()),
        other => Failure::usage(other.to_string()),
    }
}

fn runtime(e: Error) -> Failure {
    Failure::runtime(e.to_string())
}

/// Runs the CLI with the built-in generators.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let gens = verify::builtin_generators();
    let refs: Vec<&dyn Generator> = gens.iter().map(|g| g as &dyn Generator).collect();
    run_with_generators(args, out, err, &refs)
}

/// Runs the CLI; `verify` checks `gens` instead of the built-in generators.
pub fn run_with_generators<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, gens: &[&dyn Generator]) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::Divergence(a) => divergence_cmd(&a, out),
        Command::Verify(a) => verify_cmd(&a, out, gens),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            if f.code == EXIT_USAGE {
                let _ = writeln!(err, "run `pdr-lab --help` for usage");
            }
            f.code
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, kind: &str) -> Result<&'a PathBuf, Failure> {
    path.as_ref()
        .ok_or_else(|| Failure::usage(format!("--{flag} is required for --kind {kind}")))
}

fn shifted(ds: Dataset, a: &GenDataArgs) -> Result<Dataset, Failure> {
    if a.shift_angle == 0.0 && a.shift_scale == 1.0 {
        return Ok(ds);
    }
    apply_domain_shift(&ds, a.shift_angle, a.shift_scale, a.shift_seed).map_err(classify)
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    match a.kind {
        DataKind::TwoMoons | DataKind::GaussianMixture => {
            let name = if a.kind == DataKind::TwoMoons { "two-moons" } else { "gaussian-mixture" };
            let path = require(&a.out, "out", name)?;
            let ds = match a.kind {
                DataKind::TwoMoons => gen_two_moons(a.n, a.noise, a.seed),
                _ => gen_gaussian_mixture(a.classes, a.dim, a.n, a.separation, a.seed),
            }
            .map_err(classify)?;
            let ds = shifted(ds, a)?;
            write_csv(&ds, path).map_err(runtime)?;
            let _ = writeln!(out, "{}", ds.provenance());
        }
        DataKind::BiasPair => {
            let train_path = require(&a.out_train, "out-train", "bias-pair")?;
            let adv_path = require(&a.out_adv, "out-adv", "bias-pair")?;
            let (tr, adv) = gen_spurious_bias_pair_with(a.n, a.noise, a.amplitude, a.seed).map_err(classify)?;
            let (tr, adv) = (shifted(tr, a)?, shifted(adv, a)?);
            write_csv(&tr, train_path).map_err(runtime)?;
            write_csv(&adv, adv_path).map_err(runtime)?;
            let _ = writeln!(out, "{}", tr.provenance());
            let _ = writeln!(out, "{}", adv.provenance());
        }
        DataKind::Spans => {
            let path = require(&a.out, "out", "spans")?;
            let examples = gen_span_examples(a.n, a.positions, a.dim, a.seed).map_err(classify)?;
            write_span_jsonl(&examples, path).map_err(runtime)?;
            let _ = writeln!(
                out,
                "spans(n={},positions={},n_features={},seed={})",
                a.n, a.positions, a.dim, a.seed
            );
        }
    }
    Ok(EXIT_OK)
}

fn opt(v: Option<f64>) -> String {
    v.map(sig12).unwrap_or_else(|| "-".into())
}

fn summary_table(run: &TrainRun) -> String {
    let names: Vec<&String> = run.final_record().eval_accuracy.keys().collect();
    let mut s = format!("{:>6} {:>14} {:>14} {:>14} {:>14}", "epoch", "ce", "penalty", "total", "train_acc");
    for n in &names {
        s.push_str(&format!(" {:>14}", format!("acc[{n}]")));
    }
    s.push('\n');
    let n = run.records.len();
    let every = (n / 10).max(1);
    for (i, r) in run.records.iter().enumerate() {
        if i % every != 0 && i + 1 != n {
            continue;
        }
        s.push_str(&format!(
            "{:>6} {:>14} {:>14} {:>14} {:>14}",
            r.epoch,
            sig12(r.mean_ce),
            sig12(r.mean_penalty),
            sig12(r.total_loss),
            opt(r.train_accuracy)
        ));
        for name in &names {
            s.push_str(&format!(" {:>14}", opt(r.eval_accuracy.get(*name).copied())));
        }
        s.push('\n');
    }
    s
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut cfg = RunConfig::load(&a.config).map_err(classify)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let (prepared, run) = crate::config::run_config(&cfg).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => runtime(e),
        other => classify(other),
    })?;
    let doc = MetricsDocument::build(&cfg, &prepared, &run, a.deterministic_output);
    std::fs::write(&a.out, doc.to_json())
        .map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    if let Some(p) = &a.save_model {
        run.model.save(p).map_err(runtime)?;
    }
    let _ = writeln!(out, "{} on {}", cfg.train.regularizer.label(), prepared.train_set.provenance());
    let _ = write!(out, "{}", summary_table(&run));
    let _ = writeln!(out, "metrics written to {}", a.out.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalDocument {
    model: String,
    data: String,
    provenance: String,
    accuracy: f64,
    mean_ce: f64,
    n_labeled: usize,
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let model = MlpModel::load(&a.model).map_err(runtime)?;
    let ds = read_csv(&a.data).map_err(runtime)?;
    let ev = evaluate(&model, &ds).map_err(classify)?;
    let doc = EvalDocument {
        model: a.model.display().to_string(),
        data: a.data.display().to_string(),
        provenance: ds.provenance().to_string(),
        accuracy: ev.accuracy,
        mean_ce: ev.mean_ce,
        n_labeled: ev.n_labeled,
    };
    if let Some(p) = &a.out {
        let text = serde_json::to_string_pretty(&doc).expect("eval serializes") + "\n";
        std::fs::write(p, text).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
    }
    let _ = writeln!(
        out,
        "accuracy {}  mean_ce {}  n_labeled {}",
        sig12(ev.accuracy),
        sig12(ev.mean_ce),
        ev.n_labeled
    );
    Ok(EXIT_OK)
}

fn parse_simplex(flag: &str, raw: &str) -> Result<Simplex, Failure> {
    let probs: Vec<f64> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("--{flag}: `{}` is not a number", s.trim())))
        })
        .collect::<Result<_, _>>()?;
    Simplex::renormalized(probs, 1e-6).map_err(|e| Failure::usage(format!("--{flag}: {e}")))
}

fn divergence_cmd(a: &DivergenceArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let kind: GeneratorKind = a.kind.parse().map_err(classify)?;
    let p = parse_simplex("p", &a.p)?;
    let q = parse_simplex("q", &a.q)?;
    if p.len() != q.len() {
        return Err(Failure::usage(format!(
            "--p has {} entries but --q has {}",
            p.len(),
            q.len()
        )));
    }
    let (first, second) = if a.swap { (&q, &p) } else { (&p, &q) };
    let v = divergence(&generator(kind), first.probs(), second.probs()).map_err(classify)?;
    let _ = writeln!(out, "{}", sig12(v));
    Ok(EXIT_OK)
}

/// Worker count from [`THREADS_ENV`]; 0 or unset lets rayon decide.
fn thread_count() -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn verify_cmd(a: &VerifyArgs, out: &mut dyn Write, gens: &[&dyn Generator]) -> Result<i32, Failure> {
    let selection: SuiteSelection = a.suite.parse().map_err(classify)?;
    let threads = thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let report = pool
        .install(|| verify::run(selection, a.trials, a.seed, gens))
        .map_err(classify)?;
    let _ = write!(out, "{}", report.render());
    if let Some(p) = &a.out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        std::fs::write(p, text).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
