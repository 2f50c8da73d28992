//! Synthetic datasets, label withholding and CSV I/O.
//!
//! Every generated dataset carries a [`Provenance`] chain whose string form
//! can be replayed with [`replay_provenance`] to rebuild it exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, gaussian_vec, norm_l2, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Unlabeled,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(self, Label::Class(_))
    }

    /// CSV encoding: the class index, or `-1`.
    pub fn to_code(self) -> i64 {
        match self {
            Label::Class(c) => c as i64,
            Label::Unlabeled => -1,
        }
    }

    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            -1 => Some(Label::Unlabeled),
            c if c >= 0 => Some(Label::Class(c as usize)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Label,
}

/// One generation or transform step, e.g. `two-moons(n=200,noise_std=0.25,seed=7)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub name: String,
    pub params: Vec<(String, String)>,
}

impl ProvenanceStep {
    fn new(name: &str, params: &[(&str, String)]) -> Self {
        ProvenanceStep {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::invalid(format!("provenance step `{}` lacks `{key}`", self.name)))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("provenance `{}`: bad value `{raw}` for `{key}`", self.name)))
    }
}

impl fmt::Display for ProvenanceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<ProvenanceStep>,
}

impl Provenance {
    fn single(step: ProvenanceStep) -> Self {
        Provenance { steps: vec![step] }
    }

    fn then(&self, step: ProvenanceStep) -> Self {
        let mut steps = self.steps.clone();
        steps.push(step);
        Provenance { steps }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for part in s.split(" > ") {
            let part = part.trim();
            let open = part
                .find('(')
                .filter(|_| part.ends_with(')'))
                .ok_or_else(|| Error::invalid(format!("malformed provenance step `{part}`")))?;
            let name = part[..open].to_string();
            let inner = &part[open + 1..part.len() - 1];
            let mut params = Vec::new();
            for kv in inner.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("malformed provenance parameter `{kv}`")))?;
                params.push((k.to_string(), v.to_string()));
            }
            steps.push(ProvenanceStep { name, params });
        }
        Ok(Provenance { steps })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(" > ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    n_features: usize,
    n_classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        n_features: usize,
        n_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("datasets need at least one feature"));
        }
        if n_classes < 2 {
            return Err(Error::invalid("datasets need at least two classes"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != n_features {
                return Err(Error::invalid(format!(
                    "example {i} has {} features, expected {n_features}",
                    ex.features.len()
                )));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("example {i} has non-finite features")));
            }
            if let Label::Class(c) = ex.label {
                if c >= n_classes {
                    return Err(Error::invalid(format!(
                        "example {i} has label {c} but only {n_classes} classes"
                    )));
                }
            }
        }
        Ok(Dataset {
            examples,
            n_features,
            n_classes,
            provenance,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n_labeled(&self) -> usize {
        self.examples.iter().filter(|e| e.label.is_labeled()).count()
    }

    /// Labeled examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for ex in &self.examples {
            if let Label::Class(c) = ex.label {
                counts[c] += 1;
            }
        }
        counts
    }

    fn with_examples(&self, examples: Vec<Example>, step: ProvenanceStep) -> Dataset {
        Dataset {
            examples,
            n_features: self.n_features,
            n_classes: self.n_classes,
            provenance: self.provenance.then(step),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn shuffled(mut examples: Vec<Example>, rng: &mut RandomSource) -> Vec<Example> {
    rng.shuffle(&mut examples);
    examples
}

fn moon_point(class: usize, theta: f64) -> [f64; 2] {
    if class == 0 {
        [theta.cos(), theta.sin()]
    } else {
        [1.0 - theta.cos(), 0.5 - theta.sin()]
    }
}

/// Angles `linspace(0, π, count)`.
fn arc_angles(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| PI * i as f64 / (count - 1) as f64).collect(),
    }
}

fn two_moons_core(n: usize, noise_std: f64, rng: &mut RandomSource) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(n);
    for (class, count) in [(0, n.div_ceil(2)), (1, n / 2)] {
        for theta in arc_angles(count) {
            let [a, b] = moon_point(class, theta);
            let noise = gaussian_vec(rng, 2, noise_std)?;
            out.push(Example {
                features: vec![a + noise[0], b + noise[1]],
                label: Label::Class(class),
            });
        }
    }
    Ok(out)
}

/// Two interleaved unit half-circles: the upper arc `(cos θ, sin θ)` and the
/// lower arc `(1 − cos θ, 0.5 − sin θ)`, with isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("two-moons needs n >= 2"));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid("noise_std must be >= 0"));
    }
    let mut rng = RandomSource::new(seed, 0x4D00);
    let core = two_moons_core(n, noise_std, &mut rng)?;
    let examples = shuffled(core, &mut rng);
    let prov = Provenance::single(ProvenanceStep::new(
        "two-moons",
        &[("n", n.to_string()), ("noise_std", fmt_f64(noise_std)), ("seed", seed.to_string())],
    ));
    Dataset::new(examples, 2, 2, prov)
}

/// Vertices of a regular simplex with the given edge length, embedded in
/// `d` dimensions through the Helmert basis. When `d < k − 1` the trailing
/// coordinates are dropped and pairwise distances shrink.
pub fn simplex_means(k: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let s = separation / 2f64.sqrt();
    (0..k)
        .map(|i| {
            (1..=d)
                .map(|j| {
                    if j >= k {
                        return 0.0;
                    }
                    let norm = ((j * (j + 1)) as f64).sqrt();
                    let h = match i.cmp(&j) {
                        std::cmp::Ordering::Less => 1.0 / norm,
                        std::cmp::Ordering::Equal => -(j as f64) / norm,
                        std::cmp::Ordering::Greater => 0.0,
                    };
                    s * h
                })
                .collect()
        })
        .collect()
}

/// `k` unit-covariance Gaussians whose means sit on a regular simplex with
/// edge `separation`.
pub fn gen_gaussian_mixture(
    k: usize,
    d: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 || d == 0 || n == 0 {
        return Err(Error::invalid("gaussian mixture needs k >= 2, d >= 1, n >= 1"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::invalid("separation must be >= 0"));
    }
    let means = simplex_means(k, d, separation);
    let mut rng = RandomSource::new(seed, 0x6A00);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let noise = gaussian_vec(&mut rng, d, 1.0)?;
        examples.push(Example {
            features: means[c].iter().zip(&noise).map(|(m, z)| m + z).collect(),
            label: Label::Class(c),
        });
    }
    let examples = shuffled(examples, &mut rng);
    let prov = Provenance::single(ProvenanceStep::new(
        "gaussian-mixture",
        &[
            ("k", k.to_string()),
            ("d", d.to_string()),
            ("n", n.to_string()),
            ("separation", fmt_f64(separation)),
            ("seed", seed.to_string()),
        ],
    ));
    Dataset::new(examples, d, k, prov)
}

/// Seeded orthonormal pair spanning the rotation plane.
fn rotation_plane(d: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = RandomSource::new(seed, 0x5817);
    loop {
        let u = gaussian_vec(&mut rng, d, 1.0)?;
        let nu = norm_l2(&u);
        if nu < 1e-8 {
            continue;
        }
        let u: Vec<f64> = u.iter().map(|x| x / nu).collect();
        let v = gaussian_vec(&mut rng, d, 1.0)?;
        let proj = dot(&u, &v);
        let v: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - proj * b).collect();
        let nv = norm_l2(&v);
        if nv < 1e-8 {
            continue;
        }
        return Ok((u, v.iter().map(|x| x / nv).collect()));
    }
}

fn rotate_scale(x: &[f64], u: &[f64], v: &[f64], angle: f64, scale: f64) -> Vec<f64> {
    let (xu, xv) = (dot(x, u), dot(x, v));
    let (c, s) = (angle.cos(), angle.sin());
    let du = (c - 1.0) * xu - s * xv;
    let dv = s * xu + (c - 1.0) * xv;
    x.iter()
        .zip(u.iter().zip(v))
        .map(|(xi, (ui, vi))| scale * (xi + du * ui + dv * vi))
        .collect()
}

fn check_shift(ds: &Dataset, angle: f64, scale: f64) -> Result<()> {
    if ds.n_features < 2 {
        return Err(Error::invalid("domain shift needs at least two features"));
    }
    if !(scale > 0.0) || !scale.is_finite() || !angle.is_finite() {
        return Err(Error::invalid("domain shift needs finite angle and scale > 0"));
    }
    Ok(())
}

/// Rotates features by `angle` inside a seeded random 2-plane, then scales.
pub fn apply_domain_shift(ds: &Dataset, angle: f64, scale: f64, seed: u64) -> Result<Dataset> {
    check_shift(ds, angle, scale)?;
    let step = ProvenanceStep::new(
        "domain-shift",
        &[("angle", fmt_f64(angle)), ("scale", fmt_f64(scale)), ("seed", seed.to_string())],
    );
    if angle == 0.0 && scale == 1.0 {
        return Ok(ds.with_examples(ds.examples.clone(), step));
    }
    let (u, v) = rotation_plane(ds.n_features, seed)?;
    let examples = ds
        .examples
        .iter()
        .map(|e| Example {
            features: rotate_scale(&e.features, &u, &v, angle, scale),
            label: e.label,
        })
        .collect();
    Ok(ds.with_examples(examples, step))
}

/// Undoes [`apply_domain_shift`] with the same parameters.
pub fn invert_domain_shift(ds: &Dataset, angle: f64, scale: f64, seed: u64) -> Result<Dataset> {
    check_shift(ds, angle, scale)?;
    let (u, v) = rotation_plane(ds.n_features, seed)?;
    let examples = ds
        .examples
        .iter()
        .map(|e| {
            let unscaled: Vec<f64> = e.features.iter().map(|x| x / scale).collect();
            Example {
                features: rotate_scale(&unscaled, &u, &v, -angle, 1.0),
                label: e.label,
            }
        })
        .collect();
    let step = ProvenanceStep::new(
        "inverse-domain-shift",
        &[("angle", fmt_f64(angle)), ("scale", fmt_f64(scale)), ("seed", seed.to_string())],
    );
    Ok(ds.with_examples(examples, step))
}

/// Magnitude of the shortcut coordinate in the bias pair.
pub const SPURIOUS_AMPLITUDE: f64 = 0.25;

/// Two-moons core in the first two coordinates plus a third coordinate equal
/// to `±SPURIOUS_AMPLITUDE` by class. The adversarial set holds the same
/// points with the sign of the shortcut inverted.
pub fn gen_spurious_bias_pair(n: usize, core_noise: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    gen_spurious_bias_pair_with(n, core_noise, SPURIOUS_AMPLITUDE, seed)
}

pub fn gen_spurious_bias_pair_with(
    n: usize,
    core_noise: f64,
    amplitude: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n < 4 {
        return Err(Error::invalid("bias pair needs n >= 4"));
    }
    if !(core_noise >= 0.0) || !core_noise.is_finite() || !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid("bias pair needs core_noise >= 0 and amplitude > 0"));
    }
    let mut rng = RandomSource::new(seed, 0xB1A5);
    let core = shuffled(two_moons_core(n, core_noise, &mut rng)?, &mut rng);
    let build = |flip: bool, part: &str| {
        let examples = core
            .iter()
            .map(|e| {
                let class = e.label.class().expect("generated labels");
                let sign = if (class == 1) != flip { 1.0 } else { -1.0 };
                let mut features = e.features.clone();
                features.push(sign * amplitude);
                Example {
                    features,
                    label: e.label,
                }
            })
            .collect();
        let prov = Provenance::single(ProvenanceStep::new(
            "bias-pair",
            &[
                ("n", n.to_string()),
                ("core_noise", fmt_f64(core_noise)),
                ("amplitude", fmt_f64(amplitude)),
                ("seed", seed.to_string()),
                ("part", part.to_string()),
            ],
        ));
        Dataset::new(examples, 3, 2, prov)
    };
    Ok((build(false, "train")?, build(true, "adversarial")?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub label_fraction: f64,
    pub seed: u64,
}

/// Keeps `round(label_fraction · n_labeled)` labels, stratified by class
/// (largest-remainder quotas), and marks the rest unlabeled.
pub fn withhold_labels(ds: &Dataset, spec: &SplitSpec) -> Result<Dataset> {
    let f = spec.label_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid(format!("label_fraction must be in (0, 1], got {f}")));
    }
    let step = ProvenanceStep::new(
        "withhold-labels",
        &[("fraction", fmt_f64(f)), ("seed", spec.seed.to_string())],
    );
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, ex) in ds.examples.iter().enumerate() {
        if let Label::Class(c) = ex.label {
            by_class[c].push(i);
        }
    }
    let total: usize = by_class.iter().map(Vec::len).sum();
    let keep = (f * total as f64).round() as usize;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|v| keep as f64 * v.len() as f64 / total.max(1) as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ds.n_classes).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - quota[a] as f64, exact[b] - quota[b] as f64);
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut remaining = keep - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(ds.n_classes * 2) {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut rng = RandomSource::new(spec.seed, 0x1AB1);
    let mut kept = vec![false; ds.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        rng.shuffle(idx);
        for &i in idx.iter().take(quota[c]) {
            kept[i] = true;
        }
    }
    let examples = ds
        .examples
        .iter()
        .zip(&kept)
        .map(|(e, &k)| Example {
            features: e.features.clone(),
            label: if k { e.label } else { Label::Unlabeled },
        })
        .collect();
    Ok(ds.with_examples(examples, step))
}

/// Rebuilds a dataset from its provenance string.
pub fn replay_provenance(s: &str) -> Result<Dataset> {
    let prov = Provenance::parse(s)?;
    let mut steps = prov.steps.iter();
    let first = steps.next().ok_or_else(|| Error::invalid("empty provenance"))?;
    let mut ds = match first.name.as_str() {
        "two-moons" => gen_two_moons(first.get("n")?, first.get("noise_std")?, first.get("seed")?)?,
        "gaussian-mixture" => gen_gaussian_mixture(
            first.get("k")?,
            first.get("d")?,
            first.get("n")?,
            first.get("separation")?,
            first.get("seed")?,
        )?,
        "bias-pair" => {
            let (train, adv) = gen_spurious_bias_pair_with(
                first.get("n")?,
                first.get("core_noise")?,
                first.get("amplitude")?,
                first.get("seed")?,
            )?;
            match first.get::<String>("part")?.as_str() {
                "train" => train,
                "adversarial" => adv,
                other => return Err(Error::invalid(format!("unknown bias-pair part `{other}`"))),
            }
        }
        other => return Err(Error::invalid(format!("cannot replay source `{other}`"))),
    };
    for step in steps {
        ds = match step.name.as_str() {
            "domain-shift" => apply_domain_shift(&ds, step.get("angle")?, step.get("scale")?, step.get("seed")?)?,
            "inverse-domain-shift" => {
                invert_domain_shift(&ds, step.get("angle")?, step.get("scale")?, step.get("seed")?)?
            }
            "withhold-labels" => withhold_labels(
                &ds,
                &SplitSpec {
                    label_fraction: step.get("fraction")?,
                    seed: step.get("seed")?,
                },
            )?,
            other => return Err(Error::invalid(format!("cannot replay step `{other}`"))),
        };
    }
    Ok(ds)
}

const META_CLASSES: &str = "# n_classes: ";
const META_PROVENANCE: &str = "# provenance: ";

/// Writes `f0,…,f{d−1},label` with round-trip float formatting. Class count
/// and provenance go in leading `#` comment lines.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&format!("{META_CLASSES}{}\n", ds.n_classes));
    if !ds.provenance.steps.is_empty() {
        buf.push_str(&format!("{META_PROVENANCE}{}\n", ds.provenance));
    }
    let header: Vec<String> = (0..ds.n_features).map(|i| format!("f{i}")).collect();
    buf.push_str(&header.join(","));
    buf.push_str(",label\n");
    for ex in &ds.examples {
        for v in &ex.features {
            buf.push_str(&fmt_f64(*v));
            buf.push(',');
        }
        buf.push_str(&ex.label.to_code().to_string());
        buf.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut meta: BTreeMap<&str, String> = BTreeMap::new();
    let mut n_features = None;
    let mut examples = Vec::new();
    let mut last_line = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix(META_CLASSES) {
            meta.insert("n_classes", rest.trim().to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix(META_PROVENANCE) {
            meta.insert("provenance", rest.trim().to_string());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(d) = n_features else {
            let ok = fields.len() >= 2
                && fields.last() == Some(&"label")
                && fields[..fields.len() - 1]
                    .iter()
                    .enumerate()
                    .all(|(j, f)| *f == format!("f{j}"));
            if !ok {
                return Err(err(line_no, "expected header `f0,...,f{d-1},label`".into()));
            }
            n_features = Some(fields.len() - 1);
            continue;
        };
        if fields.len() != d + 1 {
            return Err(err(line_no, format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        let mut features = Vec::with_capacity(d);
        for (j, f) in fields[..d].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(line_no, format!("field f{j}: `{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("field f{j} is not finite")));
            }
            features.push(v);
        }
        let code: i64 = fields[d]
            .parse()
            .map_err(|_| err(line_no, format!("label `{}` is not an integer", fields[d])))?;
        let label = Label::from_code(code)
            .ok_or_else(|| err(line_no, format!("label {code} is invalid (use >= 0 or -1)")))?;
        examples.push(Example { features, label });
    }
    let n_features = n_features.ok_or_else(|| err(last_line.max(1), "missing header row".into()))?;
    let inferred = examples
        .iter()
        .filter_map(|e| e.label.class())
        .max()
        .map_or(2, |c| (c + 1).max(2));
    let n_classes = match meta.get("n_classes") {
        Some(v) => v
            .parse()
            .map_err(|_| err(1, format!("bad n_classes `{v}`")))?,
        None => inferred,
    };
    let provenance = match meta.get("provenance") {
        Some(p) => Provenance::parse(p)?,
        None => Provenance::single(ProvenanceStep::new("csv", &[("file", shown.replace([',', '(', ')'], "_"))])),
    };
    Dataset::new(examples, n_features, n_classes, provenance).map_err(|e| err(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let ds = gen_two_moons(4, 0.0, 1).unwrap();
        let mut pts: Vec<(usize, [f64; 2])> = ds
            .examples()
            .iter()
            .map(|e| (e.label.class().unwrap(), [e.features[0], e.features[1]]))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [(0, [1.0, 0.0]), (0, [-1.0, PI.sin()]), (1, [0.0, 0.5]), (1, [2.0, 0.5 - PI.sin()])];
        let mut expect = expect.to_vec();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for ((c, p), (ec, ep)) in pts.iter().zip(&expect) {
            assert_eq!(c, ec);
            assert!((p[0] - ep[0]).abs() < 1e-15 && (p[1] - ep[1]).abs() < 1e-15);
        }
        for e in gen_two_moons(101, 0.0, 2).unwrap().examples() {
            let (x, y) = (e.features[0], e.features[1]);
            let r = match e.label {
                Label::Class(0) => (x * x + y * y).sqrt(),
                _ => ((x - 1.0).powi(2) + (y - 0.5).powi(2)).sqrt(),
            };
            assert!((r - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn moons_balanced_and_deterministic() {
        for n in [2, 3, 10, 201] {
            let ds = gen_two_moons(n, 0.1, 4).unwrap();
            let c = ds.class_counts();
            assert_eq!(c, vec![n.div_ceil(2), n / 2]);
            assert_eq!(ds, gen_two_moons(n, 0.1, 4).unwrap());
        }
        assert_ne!(gen_two_moons(10, 0.1, 4).unwrap(), gen_two_moons(10, 0.1, 5).unwrap());
        assert!(gen_two_moons(1, 0.1, 0).is_err());
        assert!(gen_two_moons(5, -1.0, 0).is_err());
    }

    #[test]
    fn simplex_means_are_equidistant() {
        for k in 2..7 {
            let means = simplex_means(k, k - 1, 3.0);
            for i in 0..k {
                for j in 0..i {
                    let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!((d - 3.0).abs() < 1e-12, "k={k}: {d}");
                }
            }
            let padded = simplex_means(k, k + 2, 3.0);
            assert!(padded.iter().all(|m| m[k - 1..].iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn mixture_counts_and_separation_zero() {
        let ds = gen_gaussian_mixture(3, 2, 301, 0.0, 9).unwrap();
        let c = ds.class_counts();
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        let mean: f64 = ds.examples().iter().map(|e| e.features[0]).sum::<f64>() / 301.0;
        assert!(mean.abs() < 0.2);
        assert!(gen_gaussian_mixture(1, 2, 10, 1.0, 0).is_err());
    }

    #[test]
    fn domain_shift_identity_and_inverse() {
        let ds = gen_gaussian_mixture(3, 5, 50, 4.0, 1).unwrap();
        let same = apply_domain_shift(&ds, 0.0, 1.0, 3).unwrap();
        for (a, b) in ds.examples().iter().zip(same.examples()) {
            assert!(a.features.iter().zip(&b.features).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let shifted = apply_domain_shift(&ds, 0.9, 1.7, 3).unwrap();
        let back = invert_domain_shift(&shifted, 0.9, 1.7, 3).unwrap();
        for ((a, s), b) in ds.examples().iter().zip(shifted.examples()).zip(back.examples()) {
            assert_eq!(a.label, s.label);
            let moved: f64 = a.features.iter().zip(&s.features).map(|(x, y)| (x - y).abs()).sum();
            assert!(moved > 0.0);
            assert!(a.features.iter().zip(&b.features).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        // Rotation preserves norms; the scale multiplies them.
        let e0 = &ds.examples()[0].features;
        let rot = apply_domain_shift(&ds, 2.0, 1.0, 8).unwrap();
        assert!((norm_l2(&rot.examples()[0].features) - norm_l2(e0)).abs() < 1e-12);
        let one_d = gen_gaussian_mixture(2, 1, 10, 1.0, 0).unwrap();
        assert!(apply_domain_shift(&one_d, 0.1, 1.0, 0).is_err());
        assert!(apply_domain_shift(&ds, 0.1, 0.0, 0).is_err());
    }

    #[test]
    fn bias_pair_structure() {
        let (train, adv) = gen_spurious_bias_pair(40, 0.05, 3).unwrap();
        assert_eq!(train.len(), adv.len());
        for (t, a) in train.examples().iter().zip(adv.examples()) {
            assert_eq!(t.label, a.label);
            assert_eq!(t.features[..2], a.features[..2]);
            assert_eq!(t.features[2], -a.features[2]);
            let positive = t.features[2] > 0.0;
            assert_eq!(positive, t.label == Label::Class(1));
        }
        let range = |ds: &Dataset, j: usize| {
            let v: Vec<f64> = ds.examples().iter().map(|e| e.features[j]).collect();
            (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        for j in 0..3 {
            assert_eq!(range(&train, j), range(&adv, j));
        }
        assert!(gen_spurious_bias_pair(3, 0.05, 0).is_err());
    }

    /// Nearest arc centre-line, using only the two core coordinates.
    fn core_bayes(x: f64, y: f64) -> usize {
        let arc_dist = |cx: f64, cy: f64, upper: bool| {
            let (dx, dy) = (x - cx, y - cy);
            let on_half = if upper { dy >= 0.0 } else { dy <= 0.0 };
            if on_half {
                ((dx * dx + dy * dy).sqrt() - 1.0).abs()
            } else {
                let e1 = ((dx - 1.0).powi(2) + dy * dy).sqrt();
                let e2 = ((dx + 1.0).powi(2) + dy * dy).sqrt();
                e1.min(e2)
            }
        };
        if arc_dist(0.0, 0.0, true) <= arc_dist(1.0, 0.5, false) {
            0
        } else {
            1
        }
    }

    #[test]
    fn core_only_rule_is_accurate_on_both_sets() {
        let (train, adv) = gen_spurious_bias_pair(2000, 0.05, 11).unwrap();
        for ds in [&train, &adv] {
            let correct = ds
                .examples()
                .iter()
                .filter(|e| Some(core_bayes(e.features[0], e.features[1])) == e.label.class())
                .count();
            assert!(correct as f64 / ds.len() as f64 >= 0.95);
        }
    }

    #[test]
    fn withholding_counts_and_balance() {
        let ds = gen_two_moons(100, 0.1, 1).unwrap();
        let same = withhold_labels(&ds, &SplitSpec { label_fraction: 1.0, seed: 3 }).unwrap();
        assert_eq!(same.examples(), ds.examples());
        let half = withhold_labels(&ds, &SplitSpec { label_fraction: 0.5, seed: 3 }).unwrap();
        assert_eq!(half.n_labeled(), 50);
        assert_eq!(half, withhold_labels(&ds, &SplitSpec { label_fraction: 0.5, seed: 3 }).unwrap());
        let mix = gen_gaussian_mixture(3, 2, 97, 3.0, 2).unwrap();
        for f in [0.1, 0.33, 0.5, 0.77] {
            let w = withhold_labels(&mix, &SplitSpec { label_fraction: f, seed: 5 }).unwrap();
            let keep = (f * 97.0).round() as usize;
            assert_eq!(w.n_labeled(), keep);
            for (c, (&got, &all)) in w.class_counts().iter().zip(&mix.class_counts()).enumerate() {
                let prop = keep as f64 * all as f64 / 97.0;
                assert!((got as f64 - prop).abs() <= 1.0, "class {c}");
            }
            for (a, b) in mix.examples().iter().zip(w.examples()) {
                assert_eq!(a.features, b.features);
                assert!(b.label == Label::Unlabeled || b.label == a.label);
            }
        }
        assert!(withhold_labels(&ds, &SplitSpec { label_fraction: 0.0, seed: 0 }).is_err());
        assert!(withhold_labels(&ds, &SplitSpec { label_fraction: 1.5, seed: 0 }).is_err());
    }

    #[test]
    fn provenance_replays() {
        let ds = gen_two_moons(30, 0.2, 5).unwrap();
        let ds = apply_domain_shift(&ds, 0.3, 1.1, 2).unwrap();
        let ds = withhold_labels(&ds, &SplitSpec { label_fraction: 0.4, seed: 9 }).unwrap();
        assert_eq!(replay_provenance(&ds.provenance().to_string()).unwrap(), ds);
        let mix = gen_gaussian_mixture(4, 3, 20, 2.5, 1).unwrap();
        assert_eq!(replay_provenance(&mix.provenance().to_string()).unwrap(), mix);
        let (_, adv) = gen_spurious_bias_pair(20, 0.05, 3).unwrap();
        assert_eq!(replay_provenance(&adv.provenance().to_string()).unwrap(), adv);
        assert!(replay_provenance("csv(file=x)").is_err());
        assert!(replay_provenance("two-moons(n=3").is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = gen_two_moons(50, 0.3, 2).unwrap();
        let ds = withhold_labels(&ds, &SplitSpec { label_fraction: 0.5, seed: 1 }).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.examples().iter().zip(back.examples()) {
            assert!(a.features.iter().zip(&b.features).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    fn parse_error_line(body: &str) -> usize {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, body).unwrap();
        match read_csv(&path) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_errors_name_lines() {
        assert_eq!(parse_error_line("f0,f1,f2,f3,label\n1,2,3,4,0\n1,2,3,0\n"), 3);
        assert_eq!(parse_error_line("1,2,0\n"), 1);
        assert_eq!(parse_error_line("f0,label\nabc,0\n"), 2);
        assert_eq!(parse_error_line("f0,label\n1.0,-2\n"), 2);
        assert_eq!(parse_error_line(""), 1);
    }

    #[test]
    fn csv_without_metadata_infers_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "f0,f1,label\n0.5,1e-3,2\n-1,2,-1\n").unwrap();
        let ds = read_csv(&path).unwrap();
        assert_eq!(ds.n_classes(), 3);
        assert_eq!(ds.examples()[1].label, Label::Unlabeled);
        assert_eq!(ds.n_labeled(), 1);
    }

    proptest! {
        #[test]
        fn generators_are_valid(n in 2usize..80, seed in 0u64..500, noise in 0.0f64..1.0) {
            let ds = gen_two_moons(n, noise, seed).unwrap();
            prop_assert_eq!(ds.len(), n);
            prop_assert!(ds.examples().iter().all(|e| e.features.iter().all(|v| v.is_finite())));
            prop_assert_eq!(&replay_provenance(&ds.provenance().to_string()).unwrap(), &ds);
        }

        #[test]
        fn withholding_never_alters_kept(seed in 0u64..500, f in 0.01f64..1.0) {
            let ds = gen_gaussian_mixture(3, 2, 60, 2.0, seed).unwrap();
            let w = withhold_labels(&ds, &SplitSpec { label_fraction: f, seed }).unwrap();
            prop_assert_eq!(w.n_labeled(), (f * 60.0).round() as usize);
            for (a, b) in ds.examples().iter().zip(w.examples()) {
                prop_assert_eq!(&a.features, &b.features);
                prop_assert!(b.label == Label::Unlabeled || b.label == a.label);
            }
        }
    }
}
