//! Finite discrete distributions on the real line, functional evaluation and
//! exact expectations.
//!
//! Every audit in this crate reduces to finite sums over these distributions,
//! so expectations are exact up to f64 summation error and no sampling is
//! involved anywhere in the certification paths.

use rand::Rng;
use thiserror::Error;

/// Tolerance used when validating that probabilities sum to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Bisection tolerance for expectile evaluation.
pub const EXPECTILE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("support is empty")]
    EmptySupport,
    #[error("negative or non-finite probability {0}")]
    NegativeProbability(f64),
    #[error("total probability mass is zero")]
    ZeroTotalMass,
    #[error("support and probability lengths differ ({support} vs {probs})")]
    LengthMismatch { support: usize, probs: usize },
    #[error("non-finite support point {0}")]
    NonFiniteSupport(f64),
    #[error("function value is not finite at support point {0}")]
    NonFiniteValue(f64),
    #[error("parameter {name}={value} outside (0, 1)")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("mixture weights must be positive and sum to one")]
    BadMixtureWeights,
    #[error("unknown functional key '{0}'")]
    UnknownKey(String),
}

/// A finite-support probability distribution on ℝ.
///
/// Invariants held after construction: support strictly increasing with no
/// duplicates, every probability strictly positive, probabilities summing to
/// one within [`PROB_SUM_TOL`]. Values are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from raw atoms: sorts the support, merges
    /// duplicate points (summing their mass), drops zero-mass atoms and
    /// renormalizes the total mass to one.
    pub fn new(support: &[f64], probs: &[f64]) -> Result<Self, DistError> {
        if support.len() != probs.len() {
            return Err(DistError::LengthMismatch {
                support: support.len(),
                probs: probs.len(),
            });
        }
        if support.is_empty() {
            return Err(DistError::EmptySupport);
        }
        for &y in support {
            if !y.is_finite() {
                return Err(DistError::NonFiniteSupport(y));
            }
        }
        for &p in probs {
            if !p.is_finite() || p < 0.0 {
                return Err(DistError::NegativeProbability(p));
            }
        }
        let mut atoms: Vec<(f64, f64)> = support
            .iter()
            .zip(probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&y, &p)| (y, p))
            .collect();
        if atoms.is_empty() {
            return Err(DistError::ZeroTotalMass);
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (y, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == y => last.1 += p,
                _ => merged.push((y, p)),
            }
        }
        let total: f64 = merged.iter().map(|(_, p)| p).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(DistError::ZeroTotalMass);
        }
        let (support, probs) = merged.into_iter().map(|(y, p)| (y, p / total)).unzip();
        Ok(Self { support, probs })
    }

    /// Point mass at `c`.
    pub fn point_mass(c: f64) -> Self {
        Self::new(&[c], &[1.0]).expect("point mass is always valid")
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one atom
    }

    pub fn min_support(&self) -> f64 {
        self.support[0]
    }

    pub fn max_support(&self) -> f64 {
        *self.support.last().unwrap()
    }

    /// Exact expectation Σᵢ pᵢ·f(yᵢ).
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64, DistError> {
        let mut acc = 0.0;
        for (&y, &p) in self.support.iter().zip(&self.probs) {
            let v = f(y);
            if !v.is_finite() {
                return Err(DistError::NonFiniteValue(y));
            }
            acc += p * v;
        }
        Ok(acc)
    }

    /// P(Y ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (&y, &p) in self.support.iter().zip(&self.probs) {
            if y <= x {
                acc += p;
            } else {
                break;
            }
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(&y, &p)| p * y)
            .sum()
    }

    /// Lower α-quantile inf{y : F(y) ≥ α}. Always a support point.
    pub fn lower_quantile(&self, alpha: f64) -> f64 {
        let mut cum = 0.0;
        for (&y, &p) in self.support.iter().zip(&self.probs) {
            cum += p;
            // CDF values carry summation error; treat "≥ α" with a margin so
            // that exact hits (e.g. α = 0.5 on a symmetric two-point law)
            // resolve to the lower quantile.
            if cum >= alpha - PROB_SUM_TOL {
                return y;
            }
        }
        self.max_support()
    }

    /// τ-expectile: the unique root ξ of Σ pᵢ|τ − 1{yᵢ≤ξ}|(yᵢ − ξ) = 0,
    /// solved by bisection on [min support, max support].
    pub fn expectile(&self, tau: f64) -> f64 {
        let h = |xi: f64| -> f64 {
            self.support
                .iter()
                .zip(&self.probs)
                .map(|(&y, &p)| {
                    let w = if y <= xi { (tau - 1.0).abs() } else { tau };
                    p * w * (y - xi)
                })
                .sum()
        };
        let (mut lo, mut hi) = (self.min_support(), self.max_support());
        if lo == hi {
            return lo;
        }
        // h is continuous and strictly decreasing with h(lo) ≥ 0 ≥ h(hi).
        for _ in 0..200 {
            if hi - lo <= EXPECTILE_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lower-tail Expected Shortfall (1/α)·∫₀^α q_u du, computed exactly as a
    /// piecewise-constant integral of the quantile function.
    pub fn expected_shortfall(&self, alpha: f64) -> f64 {
        let mut acc = 0.0;
        let mut cum_prev = 0.0;
        for (&y, &p) in self.support.iter().zip(&self.probs) {
            if cum_prev >= alpha {
                break;
            }
            let cum = cum_prev + p;
            acc += y * (cum.min(alpha) - cum_prev);
            cum_prev = cum;
        }
        acc / alpha
    }

    /// One inverse-CDF draw.
    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (&y, &p) in self.support.iter().zip(&self.probs) {
            cum += p;
            if u < cum {
                return y;
            }
        }
        self.max_support()
    }

    /// Finite mixture Σ wᵢ·Fᵢ with positive weights summing to one.
    pub fn mixture(components: &[(f64, &DiscreteDistribution)]) -> Result<Self, DistError> {
        if components.is_empty() {
            return Err(DistError::BadMixtureWeights);
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| *w <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(DistError::BadMixtureWeights);
        }
        let mut support = Vec::new();
        let mut probs = Vec::new();
        for (w, dist) in components {
            support.extend_from_slice(dist.support());
            probs.extend(dist.probs().iter().map(|p| w * p));
        }
        Self::new(&support, &probs)
    }
}

/// A statistical functional Γ mapping distributions to a point of the action
/// domain Ξ ⊆ ℝ^k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    Mean,
    Quantile { alpha: f64 },
    Expectile { tau: f64 },
    /// The pair (lower α-quantile, lower-tail ES_α); k = 2.
    VarEs { alpha: f64 },
}

impl Functional {
    pub fn quantile(alpha: f64) -> Result<Self, DistError> {
        check_unit_interval("alpha", alpha)?;
        Ok(Self::Quantile { alpha })
    }

    pub fn expectile(tau: f64) -> Result<Self, DistError> {
        check_unit_interval("tau", tau)?;
        Ok(Self::Expectile { tau })
    }

    pub fn var_es(alpha: f64) -> Result<Self, DistError> {
        check_unit_interval("alpha", alpha)?;
        Ok(Self::VarEs { alpha })
    }

    /// Dimension k of the action domain.
    pub fn output_dim(&self) -> usize {
        match self {
            Functional::VarEs { .. } => 2,
            _ => 1,
        }
    }

    pub fn evaluate(&self, dist: &DiscreteDistribution) -> ActionPoint {
        match *self {
            Functional::Mean => ActionPoint::scalar(dist.mean()),
            Functional::Quantile { alpha } => ActionPoint::scalar(dist.lower_quantile(alpha)),
            Functional::Expectile { tau } => ActionPoint::scalar(dist.expectile(tau)),
            Functional::VarEs { alpha } => ActionPoint::new(vec![
                dist.lower_quantile(alpha),
                dist.expected_shortfall(alpha),
            ]),
        }
    }

    /// Config-file key for this functional.
    pub fn key(&self) -> String {
        match self {
            Functional::Mean => "mean".into(),
            Functional::Quantile { alpha } => format!("quantile:alpha={alpha}"),
            Functional::Expectile { tau } => format!("expectile:tau={tau}"),
            Functional::VarEs { alpha } => format!("vares:alpha={alpha}"),
        }
    }

    /// Parses `mean`, `quantile:alpha=0.5`, `expectile:tau=0.7`,
    /// `vares:alpha=0.25`.
    pub fn parse_key(key: &str) -> Result<Self, DistError> {
        let bad = || DistError::UnknownKey(key.to_string());
        let parse = |s: &str, prefix: &str| -> Result<f64, DistError> {
            s.strip_prefix(prefix)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(bad)
        };
        match key.split(':').collect::<Vec<_>>().as_slice() {
            ["mean"] => Ok(Functional::Mean),
            ["quantile", a] => Functional::quantile(parse(a, "alpha=")?),
            ["expectile", t] => Functional::expectile(parse(t, "tau=")?),
            ["vares", a] => Functional::var_es(parse(a, "alpha=")?),
            _ => Err(bad()),
        }
    }
}

fn check_unit_interval(name: &'static str, value: f64) -> Result<(), DistError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(DistError::ParameterOutOfRange { name, value });
    }
    Ok(())
}

/// A point ξ of the action domain Ξ ⊆ ℝ^k.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPoint {
    pub coords: Vec<f64>,
}

impl ActionPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self { coords }
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// First coordinate; the whole point for k = 1 functionals.
    pub fn x(&self) -> f64 {
        self.coords[0]
    }
}

/// Recipe for random test families of discrete distributions.
///
/// `cdf_margin` keeps every partial CDF sum at distance ≥ margin from each
/// α in `avoid_alphas`, so lower and upper α-quantiles coincide on the
/// generated family (the crossing-free requirement of the quantile audits).
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub count: usize,
    pub atoms_min: usize,
    pub atoms_max: usize,
    pub support_lo: f64,
    pub support_hi: f64,
    /// Minimum spacing between adjacent support points.
    pub min_gap: f64,
    pub avoid_alphas: Vec<f64>,
    pub cdf_margin: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            count: 50,
            atoms_min: 3,
            atoms_max: 6,
            support_lo: -2.0,
            support_hi: 2.0,
            min_gap: 0.05,
            avoid_alphas: vec![0.1, 0.5, 0.9],
            cdf_margin: 0.02,
        }
    }
}

/// Generates `spec.count` random distributions satisfying the crossing-free
/// CDF condition, deterministically from `seed`.
pub fn generate_family<R: Rng>(spec: &FamilySpec, rng: &mut R) -> Vec<DiscreteDistribution> {
    assert!(spec.atoms_min >= 1 && spec.atoms_max >= spec.atoms_min);
    assert!(spec.support_hi > spec.support_lo);
    let mut out = Vec::with_capacity(spec.count);
    'outer: while out.len() < spec.count {
        let n = rng.random_range(spec.atoms_min..=spec.atoms_max);
        let mut support: Vec<f64> = (0..n)
            .map(|_| rng.random_range(spec.support_lo..spec.support_hi))
            .collect();
        support.sort_by(f64::total_cmp);
        for w in support.windows(2) {
            if w[1] - w[0] < spec.min_gap {
                continue 'outer;
            }
        }
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mut cum = 0.0;
        for &p in probs.iter().take(n - 1) {
            cum += p;
            for &a in &spec.avoid_alphas {
                if (cum - a).abs() < spec.cdf_margin {
                    continue 'outer;
                }
            }
        }
        out.push(DiscreteDistribution::new(&support, &probs).expect("generated atoms are valid"));
    }
    out
}
