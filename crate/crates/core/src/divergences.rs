//! f-divergences between posteriors, parameterized by a convex generator `g`
//! with `g(1) = 0`:
//!
//! ```text
//! D_g(p̂, p) = Σᵢ pᵢ · g(p̂ᵢ / pᵢ)
//! ```
//!
//! The first argument is the perturbed (noisy) posterior, the second the clean
//! posterior whose entries weight the sum.
//!
//! Sums are evaluated through the centered generator
//! `g̃(u) = g(1 + u) − g′(1)·u`. On the simplex the linear term contributes
//! `g′(1)·Σᵢ (p̂ᵢ − pᵢ) = 0`, so the value is unchanged, but every summand is
//! non-negative and the small-perturbation regime keeps its relative accuracy
//! (no cancellation of `O(‖ε‖)` terms that sum to zero).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tensor::Simplex;

/// Floor applied to probabilities inside ratios and logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
fn clamp(p: f64) -> f64 {
    p.max(PROB_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneratorKind {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "RKL")]
    ReverseKl,
    #[serde(rename = "SHL")]
    SquaredHellinger,
    #[serde(rename = "JSD")]
    JensenShannon,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 4] = [
        GeneratorKind::Kl,
        GeneratorKind::ReverseKl,
        GeneratorKind::SquaredHellinger,
        GeneratorKind::JensenShannon,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            GeneratorKind::Kl => "KL",
            GeneratorKind::ReverseKl => "RKL",
            GeneratorKind::SquaredHellinger => "SHL",
            GeneratorKind::JensenShannon => "JSD",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KL" => Ok(GeneratorKind::Kl),
            "RKL" | "REVERSEKL" | "REVERSE-KL" => Ok(GeneratorKind::ReverseKl),
            "SHL" | "HELLINGER" | "SQUAREDHELLINGER" => Ok(GeneratorKind::SquaredHellinger),
            "JSD" | "JS" | "JENSENSHANNON" => Ok(GeneratorKind::JensenShannon),
            other => Err(Error::invalid(format!(
                "unknown divergence `{other}` (expected KL, RKL, SHL or JSD)"
            ))),
        }
    }
}

/// A convex generator with analytic first and second derivatives.
///
/// The centered forms have defaults in terms of `g` and `g′`; implementors
/// override them when a cancellation-free expression exists.
pub trait Generator: Sync {
    fn name(&self) -> &str;
    fn g(&self, t: f64) -> f64;
    fn g_prime(&self, t: f64) -> f64;
    fn g_double_prime(&self, t: f64) -> f64;

    /// `g(1 + u) − g′(1)·u`
    fn g_centered(&self, u: f64) -> f64 {
        self.g(1.0 + u) - self.g_prime(1.0) * u
    }

    /// `g′(1 + u) − g′(1)`
    fn g_centered_prime(&self, u: f64) -> f64 {
        self.g_prime(1.0 + u) - self.g_prime(1.0)
    }

    /// `g″(1)`, the curvature that scales the local quadratic behavior.
    fn curvature(&self) -> f64 {
        self.g_double_prime(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorFn {
    kind: GeneratorKind,
}

pub fn generator(kind: GeneratorKind) -> GeneratorFn {
    GeneratorFn { kind }
}

impl GeneratorFn {
    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }
}

impl From<GeneratorKind> for GeneratorFn {
    fn from(kind: GeneratorKind) -> Self {
        GeneratorFn { kind }
    }
}

impl Generator for GeneratorFn {
    fn name(&self) -> &str {
        self.kind.short_name()
    }

    fn g(&self, t: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => t * t.ln(),
            GeneratorKind::ReverseKl => -t.ln(),
            GeneratorKind::SquaredHellinger => (t.sqrt() - 1.0).powi(2),
            GeneratorKind::JensenShannon => {
                0.5 * t * t.ln() - 0.5 * (1.0 + t) * (0.5 * (1.0 + t)).ln()
            }
        }
    }

    fn g_prime(&self, t: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => t.ln() + 1.0,
            GeneratorKind::ReverseKl => -1.0 / t,
            GeneratorKind::SquaredHellinger => 1.0 - 1.0 / t.sqrt(),
            GeneratorKind::JensenShannon => 0.5 * (2.0 * t / (1.0 + t)).ln(),
        }
    }

    fn g_double_prime(&self, t: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => 1.0 / t,
            GeneratorKind::ReverseKl => 1.0 / (t * t),
            GeneratorKind::SquaredHellinger => 0.5 * t.powf(-1.5),
            GeneratorKind::JensenShannon => 0.5 / t - 0.5 / (1.0 + t),
        }
    }

    fn g_centered(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => (1.0 + u) * u.ln_1p() - u,
            GeneratorKind::ReverseKl => u - u.ln_1p(),
            GeneratorKind::SquaredHellinger => {
                let d = u / ((1.0 + u).sqrt() + 1.0);
                d * d
            }
            GeneratorKind::JensenShannon => {
                0.5 * (1.0 + u) * u.ln_1p() - 0.5 * (2.0 + u) * (0.5 * u).ln_1p()
            }
        }
    }

    fn g_centered_prime(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => u.ln_1p(),
            GeneratorKind::ReverseKl => u / (1.0 + u),
            GeneratorKind::SquaredHellinger => {
                let s = (1.0 + u).sqrt();
                u / ((s + 1.0) * s)
            }
            GeneratorKind::JensenShannon => 0.5 * (u.ln_1p() - (0.5 * u).ln_1p()),
        }
    }

    fn curvature(&self) -> f64 {
        match self.kind {
            GeneratorKind::Kl | GeneratorKind::ReverseKl => 1.0,
            GeneratorKind::SquaredHellinger => 0.5,
            GeneratorKind::JensenShannon => 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceValue {
    pub value: f64,
    pub kind: GeneratorKind,
}

#[inline]
fn centered_ratio(a: f64, b: f64) -> f64 {
    let (a, b) = (clamp(a), clamp(b));
    (a - b) / b
}

/// `D_g(p_hat, p)` on raw probability slices.
pub fn divergence<G: Generator + ?Sized>(g: &G, p_hat: &[f64], p: &[f64]) -> Result<f64> {
    check_len("divergence arguments", p.len(), p_hat.len())?;
    Ok(p_hat
        .iter()
        .zip(p)
        .map(|(&a, &b)| b * g.g_centered(centered_ratio(a, b)))
        .sum())
}

pub fn f_divergence(g: &GeneratorFn, p_hat: &Simplex, p: &Simplex) -> Result<DivergenceValue> {
    Ok(DivergenceValue {
        value: divergence(g, p_hat.probs(), p.probs())?,
        kind: g.kind(),
    })
}

/// `∂D_g/∂p̂ᵢ = g′(p̂ᵢ / pᵢ)`.
pub fn f_divergence_grad_wrt_phat(g: &GeneratorFn, p_hat: &Simplex, p: &Simplex) -> Result<Vec<f64>> {
    check_len("divergence arguments", p.len(), p_hat.len())?;
    Ok(p_hat
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(&a, &b)| g.g_prime(clamp(a) / clamp(b)))
        .collect())
}

/// Gradient with respect to the first argument, shifted by `−g′(1)` per
/// component. The shift is invisible once chained through a posterior map
/// (posterior Jacobian columns sum to zero).
pub(crate) fn centered_grad_first<G: Generator + ?Sized>(g: &G, p_hat: &[f64], p: &[f64]) -> Vec<f64> {
    p_hat
        .iter()
        .zip(p)
        .map(|(&a, &b)| g.g_centered_prime(centered_ratio(a, b)))
        .collect()
}

/// Gradient with respect to the second (weighting) argument, up to the same
/// kind of constant shift: `g̃(uᵢ) − rᵢ·g̃′(uᵢ)`.
pub(crate) fn centered_grad_second<G: Generator + ?Sized>(g: &G, p_hat: &[f64], p: &[f64]) -> Vec<f64> {
    p_hat
        .iter()
        .zip(p)
        .map(|(&a, &b)| {
            let u = centered_ratio(a, b);
            g.g_centered(u) - (1.0 + u) * g.g_centered_prime(u)
        })
        .collect()
}

/// `2·KL(p‖q) − ‖p − q‖₁²`, non-negative by Pinsker's inequality.
pub fn pinsker_gap(p: &Simplex, q: &Simplex) -> Result<f64> {
    let kl = divergence(&generator(GeneratorKind::Kl), p.probs(), q.probs())?;
    let l1 = l1_distance(p, q)?;
    Ok(2.0 * kl - l1 * l1)
}

pub fn l1_distance(p: &Simplex, q: &Simplex) -> Result<f64> {
    check_len("distance arguments", p.len(), q.len())?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum())
}

pub fn l2_distance(p: &Simplex, q: &Simplex) -> Result<f64> {
    check_len("distance arguments", p.len(), q.len())?;
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RandomSource;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Simplex {
        Simplex::new(v.to_vec()).unwrap()
    }

    fn random_simplex(rng: &mut RandomSource, m: usize) -> Simplex {
        let raw: Vec<f64> = (0..m).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let sum: f64 = raw.iter().sum();
        Simplex::new(raw.iter().map(|x| x / sum).collect()).unwrap()
    }

    fn kl_direct(p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .map(|(a, b)| if *a == 0.0 { 0.0 } else { a * (a / b).ln() })
            .sum()
    }

    #[test]
    fn g_at_one_is_zero() {
        for kind in GeneratorKind::ALL {
            let g = generator(kind);
            assert_eq!(g.g(1.0), 0.0, "{kind}");
            assert_eq!(g.g_centered(0.0), 0.0, "{kind}");
        }
    }

    #[test]
    fn curvature_at_one() {
        let expect = [(GeneratorKind::Kl, 1.0), (GeneratorKind::ReverseKl, 1.0), (GeneratorKind::SquaredHellinger, 0.5), (GeneratorKind::JensenShannon, 0.25)];
        for (kind, c) in expect {
            let g = generator(kind);
            assert!((g.g_double_prime(1.0) - c).abs() < 1e-15);
            assert_eq!(g.curvature(), c);
            let h = 1e-5;
            let fd = (g.g_prime(1.0 + h) - g.g_prime(1.0 - h)) / (2.0 * h);
            assert!((fd - c).abs() < 1e-8, "{kind}: {fd}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = RandomSource::new(21, 0);
        for kind in GeneratorKind::ALL {
            let g = generator(kind);
            for _ in 0..200 {
                let t = 0.1 + 9.9 * rng.uniform();
                let h = 1e-5 * t;
                let d1 = (g.g(t + h) - g.g(t - h)) / (2.0 * h);
                let d2 = (g.g_prime(t + h) - g.g_prime(t - h)) / (2.0 * h);
                assert!((d1 - g.g_prime(t)).abs() <= 1e-6 * g.g_prime(t).abs().max(1e-3), "{kind} g' at {t}");
                assert!((d2 - g.g_double_prime(t)).abs() <= 1e-6 * g.g_double_prime(t).abs(), "{kind} g'' at {t}");
            }
        }
    }

    #[test]
    fn centered_forms_agree_with_plain_forms() {
        for kind in GeneratorKind::ALL {
            let g = generator(kind);
            for &u in &[-0.9, -0.3, 0.2, 1.5, 7.0] {
                let plain = g.g(1.0 + u) - g.g_prime(1.0) * u;
                assert!((g.g_centered(u) - plain).abs() < 1e-14, "{kind} {u}");
                let plain_d = g.g_prime(1.0 + u) - g.g_prime(1.0);
                assert!((g.g_centered_prime(u) - plain_d).abs() < 1e-14, "{kind} {u}");
            }
        }
    }

    #[test]
    fn divergence_examples() {
        let p_hat = s(&[0.5, 0.5]);
        let p = s(&[0.25, 0.75]);
        let same = s(&[0.3, 0.7]);
        for kind in GeneratorKind::ALL {
            assert_eq!(f_divergence(&generator(kind), &same, &same).unwrap().value, 0.0);
        }
        let kl = f_divergence(&generator(GeneratorKind::Kl), &p_hat, &p).unwrap().value;
        assert!((kl - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((kl - 0.143841036226).abs() < 1e-12);
        let shl = f_divergence(&generator(GeneratorKind::SquaredHellinger), &p_hat, &p).unwrap().value;
        let expect = (0.5f64.sqrt() - 0.5).powi(2) + (0.5f64.sqrt() - 0.75f64.sqrt()).powi(2);
        assert!((shl - expect).abs() < 1e-15);
        assert!((shl - 0.068148).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = s(&[0.5, 0.5]);
        let b = s(&[0.2, 0.3, 0.5]);
        let g = generator(GeneratorKind::Kl);
        assert!(matches!(f_divergence(&g, &a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(f_divergence_grad_wrt_phat(&g, &a, &b).is_err());
        assert!(pinsker_gap(&a, &b).is_err());
        assert!(l1_distance(&a, &b).is_err());
        assert!(l2_distance(&a, &b).is_err());
    }

    #[test]
    fn grad_examples() {
        let p = s(&[0.3, 0.7]);
        assert_eq!(f_divergence_grad_wrt_phat(&generator(GeneratorKind::Kl), &p, &p).unwrap(), vec![1.0, 1.0]);
        assert_eq!(f_divergence_grad_wrt_phat(&generator(GeneratorKind::ReverseKl), &p, &p).unwrap(), vec![-1.0, -1.0]);
        let grad = f_divergence_grad_wrt_phat(&generator(GeneratorKind::Kl), &s(&[0.5, 0.5]), &s(&[0.25, 0.75])).unwrap();
        assert!((grad[0] - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((grad[1] - ((2.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn grad_matches_finite_differences() {
        // The finite difference perturbs one coordinate of p̂ off the simplex,
        // so it is taken on the literal Σ pᵢ g(p̂ᵢ/pᵢ) sum.
        let literal = |g: &GeneratorFn, a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| y * g.g(x / y)).sum()
        };
        let mut rng = RandomSource::new(8, 0);
        for kind in GeneratorKind::ALL {
            let g = generator(kind);
            for _ in 0..100 {
                let m = 2 + rng.index(5);
                let p_hat = random_simplex(&mut rng, m);
                let p = random_simplex(&mut rng, m);
                let grad = f_divergence_grad_wrt_phat(&g, &p_hat, &p).unwrap();
                for i in 0..m {
                    let h = 1e-6;
                    let mut up = p_hat.probs().to_vec();
                    let mut dn = up.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (literal(&g, &up, p.probs()) - literal(&g, &dn, p.probs())) / (2.0 * h);
                    assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0), "{kind}: {fd} vs {}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn centered_grads_match_finite_differences_on_simplex() {
        // Along a tangent direction of the simplex the constant shift drops out.
        let mut rng = RandomSource::new(9, 0);
        for kind in GeneratorKind::ALL {
            let g = generator(kind);
            for _ in 0..50 {
                let m = 3;
                let a = random_simplex(&mut rng, m);
                let b = random_simplex(&mut rng, m);
                let dir = [0.01, -0.004, -0.006];
                let h = 1e-4;
                let shift = |v: &[f64], s: f64| -> Vec<f64> { v.iter().zip(dir).map(|(x, d)| x + s * d).collect() };
                let g1 = centered_grad_first(&g, a.probs(), b.probs());
                let fd1 = (divergence(&g, &shift(a.probs(), h), b.probs()).unwrap()
                    - divergence(&g, &shift(a.probs(), -h), b.probs()).unwrap())
                    / (2.0 * h);
                let an1: f64 = g1.iter().zip(dir).map(|(x, d)| x * d).sum();
                assert!((fd1 - an1).abs() < 1e-5 * an1.abs().max(1e-3), "{kind}: {fd1} vs {an1}");
                let g2 = centered_grad_second(&g, a.probs(), b.probs());
                let fd2 = (divergence(&g, a.probs(), &shift(b.probs(), h)).unwrap()
                    - divergence(&g, a.probs(), &shift(b.probs(), -h)).unwrap())
                    / (2.0 * h);
                let an2: f64 = g2.iter().zip(dir).map(|(x, d)| x * d).sum();
                assert!((fd2 - an2).abs() < 1e-5 * an2.abs().max(1e-3), "{kind}: {fd2} vs {an2}");
            }
        }
    }

    #[test]
    fn pinsker_examples() {
        let p = s(&[0.2, 0.8]);
        assert_eq!(pinsker_gap(&p, &p).unwrap(), 0.0);
        let gap = pinsker_gap(&s(&[1.0 - 1e-9, 1e-9]), &s(&[0.5, 0.5])).unwrap();
        assert!((gap - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-6, "{gap}");
        let mut rng = RandomSource::new(4, 0);
        for _ in 0..10_000 {
            let m = 2 + rng.index(9);
            let a = random_simplex(&mut rng, m);
            let b = random_simplex(&mut rng, m);
            assert!(pinsker_gap(&a, &b).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        let a = s(&[1.0, 0.0]);
        let b = s(&[0.0, 1.0]);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        assert!((l2_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("kl".parse::<GeneratorKind>().unwrap(), GeneratorKind::Kl);
        assert_eq!("RKL".parse::<GeneratorKind>().unwrap(), GeneratorKind::ReverseKl);
        assert_eq!("shl".parse::<GeneratorKind>().unwrap(), GeneratorKind::SquaredHellinger);
        assert_eq!("JSD".parse::<GeneratorKind>().unwrap(), GeneratorKind::JensenShannon);
        assert!("tv".parse::<GeneratorKind>().is_err());
    }

    proptest! {
        #[test]
        fn generators_convex(t1 in 1e-3f64..50.0, t2 in 1e-3f64..50.0) {
            for kind in GeneratorKind::ALL {
                let g = generator(kind);
                let mid = g.g(0.5 * (t1 + t2));
                prop_assert!(mid <= 0.5 * (g.g(t1) + g.g(t2)) + 1e-12);
            }
        }

        #[test]
        fn identities_on_random_pairs(seed in any::<u64>(), m in 2usize..11) {
            let mut rng = RandomSource::new(seed, 0);
            let a = random_simplex(&mut rng, m);
            let b = random_simplex(&mut rng, m);
            let d = |k, x: &Simplex, y: &Simplex| f_divergence(&generator(k), x, y).unwrap().value;
            for kind in GeneratorKind::ALL {
                prop_assert!(d(kind, &a, &b) >= -1e-12);
                prop_assert_eq!(d(kind, &a, &a), 0.0);
            }
            prop_assert!((d(GeneratorKind::Kl, &a, &b) - kl_direct(a.probs(), b.probs())).abs() <= 1e-12);
            prop_assert!((d(GeneratorKind::Kl, &a, &b) - d(GeneratorKind::ReverseKl, &b, &a)).abs() <= 1e-12);
            prop_assert!((d(GeneratorKind::JensenShannon, &a, &b) - d(GeneratorKind::JensenShannon, &b, &a)).abs() <= 1e-12);
            prop_assert!((d(GeneratorKind::SquaredHellinger, &a, &b) - d(GeneratorKind::SquaredHellinger, &b, &a)).abs() <= 1e-12);
            prop_assert!(d(GeneratorKind::JensenShannon, &a, &b) <= 2f64.ln() + 1e-12);
            let mid: Vec<f64> = a.probs().iter().zip(b.probs()).map(|(x, y)| 0.5 * (x + y)).collect();
            let jsd_direct = 0.5 * kl_direct(a.probs(), &mid) + 0.5 * kl_direct(b.probs(), &mid);
            prop_assert!((d(GeneratorKind::JensenShannon, &a, &b) - jsd_direct).abs() <= 1e-12);
            let l1 = l1_distance(&a, &b).unwrap();
            let l2 = l2_distance(&a, &b).unwrap();
            prop_assert!(l2 <= l1 + 1e-15);
            prop_assert!(l1 * l1 <= 2.0 * kl_direct(a.probs(), b.probs()) + 1e-12);
        }
    }
}
