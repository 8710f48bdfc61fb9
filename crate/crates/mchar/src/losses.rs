//! The characterized loss families: Bregman losses for the mean, generalized
//! piecewise linear (GPL) losses for quantiles, the asymmetric squared loss
//! for expectiles, and a joint (VaR, ES) loss.
//!
//! Bregman: ρ(y,ξ) = φ(y) − φ(ξ) + φ′(ξ)(ξ−y) + κ(y) with φ convex.
//! GPL:     ρ(y,ξ) = (1{y≤ξ} − α)(g(ξ) − g(y)) + κ(y) with g increasing.
//!
//! The joint (VaR, ES) loss is one fixed member of the Fissler–Ziegel class,
//! ρ(y,(v,e)) = exp(e)·(e − v − 1 + (1/α)·1{y≤v}·(v − y)) on the region
//! e ≤ v; its strict consistency for the pair is certified by the checkers
//! rather than assumed.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::dist::ActionPoint;

/// Subgradient queries this close to a kink are rejected.
pub const KINK_TOL: f64 = 1e-9;

/// Slack allowed on the e ≤ v domain boundary of the joint (VaR, ES) loss.
pub const VAR_ES_DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{what}: argument {value} outside domain")]
    Domain { what: &'static str, value: f64 },
    #[error("subgradient queried within {KINK_TOL} of a kink at xi={xi}")]
    KinkPoint { xi: f64 },
    #[error("invalid loss specification: {0}")]
    InvalidSpec(String),
    #[error("action point has dimension {got}, loss expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown loss key '{0}'")]
    UnknownKey(String),
}

/// Convex function φ with a selected subgradient φ′, for Bregman losses.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSpec {
    /// φ(x) = x²
    Square,
    /// φ(x) = eˣ
    Exp,
    /// φ(x) = |x|^p, p > 1
    AbsPow { p: f64 },
    /// Piecewise linear convex φ: slope `slopes[j]` on the j-th piece, with
    /// `slopes.len() == knots.len() + 1`, nondecreasing; φ(knots[0]) = 0.
    PiecewiseLinear { knots: Vec<f64>, slopes: Vec<f64> },
}

impl ConvexSpec {
    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            ConvexSpec::AbsPow { p } if !(*p > 1.0) => {
                Err(LossError::InvalidSpec(format!("abspow exponent p={p} must exceed 1")))
            }
            ConvexSpec::PiecewiseLinear { knots, slopes } => {
                if slopes.len() != knots.len() + 1 {
                    return Err(LossError::InvalidSpec(
                        "piecewise linear spec needs one more slope than knots".into(),
                    ));
                }
                if knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(LossError::InvalidSpec("knots must be strictly increasing".into()));
                }
                if slopes.windows(2).any(|w| w[0] > w[1]) {
                    return Err(LossError::InvalidSpec(
                        "slopes must be nondecreasing for convexity".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn strictly_convex(&self) -> bool {
        !matches!(self, ConvexSpec::PiecewiseLinear { .. })
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self {
            ConvexSpec::Square => x * x,
            ConvexSpec::Exp => x.exp(),
            ConvexSpec::AbsPow { p } => x.abs().powf(*p),
            ConvexSpec::PiecewiseLinear { knots, slopes } => {
                let anchor = knots[0];
                if x < anchor {
                    return slopes[0] * (x - anchor);
                }
                let mut value = 0.0;
                let mut prev = anchor;
                for (j, &k) in knots.iter().enumerate().skip(1) {
                    if x <= k {
                        return value + slopes[j] * (x - prev);
                    }
                    value += slopes[j] * (k - prev);
                    prev = k;
                }
                value + slopes[knots.len()] * (x - prev)
            }
        }
    }

    /// Selected subgradient; the right derivative at piecewise-linear knots.
    pub fn phi_prime(&self, x: f64) -> f64 {
        match self {
            ConvexSpec::Square => 2.0 * x,
            ConvexSpec::Exp => x.exp(),
            ConvexSpec::AbsPow { p } => {
                if x == 0.0 {
                    0.0
                } else {
                    p * x.signum() * x.abs().powf(p - 1.0)
                }
            }
            ConvexSpec::PiecewiseLinear { knots, slopes } => {
                let piece = knots.iter().take_while(|&&k| x >= k).count();
                slopes[piece]
            }
        }
    }

    /// Second derivative where it exists; zero on piecewise-linear pieces.
    fn phi_second(&self, x: f64) -> f64 {
        match self {
            ConvexSpec::Square => 2.0,
            ConvexSpec::Exp => x.exp(),
            ConvexSpec::AbsPow { p } => p * (p - 1.0) * x.abs().powf(p - 2.0),
            ConvexSpec::PiecewiseLinear { .. } => 0.0,
        }
    }

    /// Points where ξ ↦ ρ(y, ξ) is not differentiable.
    fn kinks(&self) -> Vec<f64> {
        match self {
            ConvexSpec::PiecewiseLinear { knots, .. } => knots.clone(),
            ConvexSpec::AbsPow { p } if *p < 2.0 => vec![0.0],
            _ => Vec::new(),
        }
    }

    fn name(&self) -> String {
        match self {
            ConvexSpec::Square => "square".into(),
            ConvexSpec::Exp => "exp".into(),
            ConvexSpec::AbsPow { p } => format!("abspow:p={p}"),
            ConvexSpec::PiecewiseLinear { .. } => "pwl".into(),
        }
    }
}

/// Increasing function g for GPL losses.
#[derive(Debug, Clone, PartialEq)]
pub enum IncreasingSpec {
    Identity,
    /// g = log, domain (0, ∞); restricted to positive supports.
    Log,
    /// g(x) = sign(x)·|x|^β, β > 0
    Power { beta: f64 },
    /// Nondecreasing step function g(x) = #{j : knots[j] ≤ x}.
    Step { knots: Vec<f64> },
}

impl IncreasingSpec {
    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            IncreasingSpec::Power { beta } if !(*beta > 0.0) => Err(LossError::InvalidSpec(
                format!("power exponent beta={beta} must be positive"),
            )),
            IncreasingSpec::Step { knots } if knots.windows(2).any(|w| w[0] >= w[1]) => Err(
                LossError::InvalidSpec("step knots must be strictly increasing".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn strictly_increasing(&self) -> bool {
        !matches!(self, IncreasingSpec::Step { .. })
    }

    pub fn g(&self, x: f64) -> Result<f64, LossError> {
        match self {
            IncreasingSpec::Identity => Ok(x),
            IncreasingSpec::Log => {
                if x <= 0.0 {
                    Err(LossError::Domain { what: "gpl:log", value: x })
                } else {
                    Ok(x.ln())
                }
            }
            IncreasingSpec::Power { beta } => Ok(x.signum() * x.abs().powf(*beta)),
            IncreasingSpec::Step { knots } => {
                Ok(knots.iter().take_while(|&&k| k <= x).count() as f64)
            }
        }
    }

    fn g_prime(&self, x: f64) -> Result<f64, LossError> {
        match self {
            IncreasingSpec::Identity => Ok(1.0),
            IncreasingSpec::Log => {
                if x <= 0.0 {
                    Err(LossError::Domain { what: "gpl:log", value: x })
                } else {
                    Ok(1.0 / x)
                }
            }
            IncreasingSpec::Power { beta } => Ok(beta * x.abs().powf(beta - 1.0)),
            IncreasingSpec::Step { .. } => Ok(0.0),
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            IncreasingSpec::Step { knots } => knots.clone(),
            IncreasingSpec::Power { beta } if *beta < 1.0 => vec![0.0],
            _ => Vec::new(),
        }
    }

    fn name(&self) -> String {
        match self {
            IncreasingSpec::Identity => "identity".into(),
            IncreasingSpec::Log => "log".into(),
            IncreasingSpec::Power { beta } => format!("power:beta={beta}"),
            IncreasingSpec::Step { .. } => "step".into(),
        }
    }
}

/// The κ(y) offset of Eqs. (3)–(4); shifts expected loss by a constant
/// without moving its argmin.
#[derive(Clone)]
pub enum Kappa {
    Zero,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Kappa {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Kappa::Zero => 0.0,
            Kappa::Custom(f) => f(y),
        }
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Kappa::Custom(Arc::new(f))
    }
}

impl fmt::Debug for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Zero => write!(f, "Kappa::Zero"),
            Kappa::Custom(_) => write!(f, "Kappa::Custom(..)"),
        }
    }
}

/// An evaluable loss ρ(y, ξ) with family metadata.
#[derive(Debug, Clone)]
pub enum Loss {
    Bregman { spec: ConvexSpec, kappa: Kappa },
    Gpl { alpha: f64, spec: IncreasingSpec, kappa: Kappa },
    ExpectileAsym { tau: f64 },
    JointVarEs { alpha: f64 },
}

/// Bregman loss ρ(y,ξ) = φ(y) − φ(ξ) + φ′(ξ)(ξ−y) + κ(y).
pub fn bregman_eval(spec: &ConvexSpec, kappa: &Kappa, y: f64, xi: f64) -> f64 {
    spec.phi(y) - spec.phi(xi) + spec.phi_prime(xi) * (xi - y) + kappa.eval(y)
}

/// GPL loss ρ(y,ξ) = (1{y≤ξ} − α)(g(ξ) − g(y)) + κ(y).
pub fn gpl_eval(
    alpha: f64,
    spec: &IncreasingSpec,
    kappa: &Kappa,
    y: f64,
    xi: f64,
) -> Result<f64, LossError> {
    let ind = if y <= xi { 1.0 } else { 0.0 };
    Ok((ind - alpha) * (spec.g(xi)? - spec.g(y)?) + kappa.eval(y))
}

/// Asymmetric squared loss ρ(y,ξ) = |τ − 1{y≤ξ}|·(y−ξ)².
pub fn expectile_eval(tau: f64, y: f64, xi: f64) -> f64 {
    let w = if y <= xi { (tau - 1.0).abs() } else { tau };
    w * (y - xi) * (y - xi)
}

/// Joint (VaR_α, ES_α) loss on the lower-tail region e ≤ v.
pub fn joint_var_es_eval(alpha: f64, y: f64, v: f64, e: f64) -> Result<f64, LossError> {
    if e > v + VAR_ES_DOMAIN_TOL {
        return Err(LossError::Domain { what: "varvs: requires e <= v", value: e - v });
    }
    let ind = if y <= v { 1.0 } else { 0.0 };
    Ok(e.exp() * (e - v - 1.0 + ind * (v - y) / alpha))
}

impl Loss {
    pub fn action_dim(&self) -> usize {
        match self {
            Loss::JointVarEs { .. } => 2,
            _ => 1,
        }
    }

    pub fn evaluate(&self, y: f64, xi: &ActionPoint) -> Result<f64, LossError> {
        self.check_dim(xi)?;
        match self {
            Loss::Bregman { spec, kappa } => Ok(bregman_eval(spec, kappa, y, xi.x())),
            Loss::Gpl { alpha, spec, kappa } => gpl_eval(*alpha, spec, kappa, y, xi.x()),
            Loss::ExpectileAsym { tau } => Ok(expectile_eval(*tau, y, xi.x())),
            Loss::JointVarEs { alpha } => {
                joint_var_es_eval(*alpha, y, xi.coords[0], xi.coords[1])
            }
        }
    }

    /// Gradient of ρ(y, ·) at ξ, defined off the kink set.
    pub fn subgradient(&self, y: f64, xi: &ActionPoint) -> Result<Vec<f64>, LossError> {
        self.check_dim(xi)?;
        match self {
            Loss::Bregman { spec, .. } => {
                let x = xi.x();
                for k in spec.kinks() {
                    if (x - k).abs() < KINK_TOL {
                        return Err(LossError::KinkPoint { xi: x });
                    }
                }
                Ok(vec![spec.phi_second(x) * (x - y)])
            }
            Loss::Gpl { alpha, spec, .. } => {
                let x = xi.x();
                if (x - y).abs() < KINK_TOL {
                    return Err(LossError::KinkPoint { xi: x });
                }
                for k in spec.kinks() {
                    if (x - k).abs() < KINK_TOL {
                        return Err(LossError::KinkPoint { xi: x });
                    }
                }
                let ind = if y <= x { 1.0 } else { 0.0 };
                Ok(vec![(ind - alpha) * spec.g_prime(x)?])
            }
            Loss::ExpectileAsym { tau } => {
                let x = xi.x();
                let w = if y <= x { (tau - 1.0).abs() } else { *tau };
                Ok(vec![-2.0 * w * (y - x)])
            }
            Loss::JointVarEs { alpha } => {
                let (v, e) = (xi.coords[0], xi.coords[1]);
                if (v - y).abs() < KINK_TOL {
                    return Err(LossError::KinkPoint { xi: v });
                }
                if e > v + VAR_ES_DOMAIN_TOL {
                    return Err(LossError::Domain { what: "varvs: requires e <= v", value: e - v });
                }
                let ind = if y <= v { 1.0 } else { 0.0 };
                let dv = e.exp() * (ind / alpha - 1.0);
                let de = e.exp() * (e - v + ind * (v - y) / alpha);
                Ok(vec![dv, de])
            }
        }
    }

    /// Whether the family's spec makes the loss a candidate for *strict*
    /// consistency (strictly convex φ / strictly increasing g).
    pub fn is_strict_spec(&self) -> bool {
        match self {
            Loss::Bregman { spec, .. } => spec.strictly_convex(),
            Loss::Gpl { spec, .. } => spec.strictly_increasing(),
            Loss::ExpectileAsym { .. } | Loss::JointVarEs { .. } => true,
        }
    }

    /// The κ component, for the families that carry one.
    pub fn kappa(&self) -> Option<&Kappa> {
        match self {
            Loss::Bregman { kappa, .. } | Loss::Gpl { kappa, .. } => Some(kappa),
            _ => None,
        }
    }

    /// Replaces κ, leaving the family untouched.
    pub fn with_kappa(&self, kappa: Kappa) -> Loss {
        match self {
            Loss::Bregman { spec, .. } => Loss::Bregman { spec: spec.clone(), kappa },
            Loss::Gpl { alpha, spec, .. } => {
                Loss::Gpl { alpha: *alpha, spec: spec.clone(), kappa }
            }
            other => other.clone(),
        }
    }

    /// Config-file key for this loss.
    pub fn key(&self) -> String {
        match self {
            Loss::Bregman { spec, .. } => format!("bregman:{}", spec.name()),
            Loss::Gpl { alpha, spec, .. } => format!("gpl:{}:alpha={alpha}", spec.name()),
            Loss::ExpectileAsym { tau } => format!("expectile:tau={tau}"),
            Loss::JointVarEs { alpha } => format!("varvs:alpha={alpha}"),
        }
    }

    /// Parses keys like `bregman:square`, `gpl:identity:alpha=0.9`,
    /// `expectile:tau=0.7`, `varvs:alpha=0.25`.
    pub fn parse_key(key: &str) -> Result<Loss, LossError> {
        let parts: Vec<&str> = key.split(':').collect();
        let unknown = || LossError::UnknownKey(key.to_string());
        let loss = match parts.as_slice() {
            ["bregman", rest @ ..] => {
                let spec = match rest {
                    ["square"] => ConvexSpec::Square,
                    ["exp"] => ConvexSpec::Exp,
                    ["abspow", p] => ConvexSpec::AbsPow { p: parse_param(p, "p", key)? },
                    ["pwl"] => default_piecewise_linear(),
                    _ => return Err(unknown()),
                };
                Loss::Bregman { spec, kappa: Kappa::Zero }
            }
            ["gpl", g, params @ ..] => {
                let mut alpha = None;
                let mut beta = None;
                for p in params {
                    if let Some(v) = p.strip_prefix("alpha=") {
                        alpha = Some(parse_float(v, key)?);
                    } else if let Some(v) = p.strip_prefix("beta=") {
                        beta = Some(parse_float(v, key)?);
                    } else {
                        return Err(unknown());
                    }
                }
                let alpha = alpha.ok_or_else(unknown)?;
                check_open_unit("alpha", alpha, key)?;
                let spec = match (*g, beta) {
                    ("identity", None) => IncreasingSpec::Identity,
                    ("log", None) => IncreasingSpec::Log,
                    ("power", Some(beta)) => IncreasingSpec::Power { beta },
                    ("step", None) => default_step(),
                    _ => return Err(unknown()),
                };
                Loss::Gpl { alpha, spec, kappa: Kappa::Zero }
            }
            ["expectile", tau] => {
                let tau = parse_param(tau, "tau", key)?;
                check_open_unit("tau", tau, key)?;
                Loss::ExpectileAsym { tau }
            }
            ["varvs", alpha] => {
                let alpha = parse_param(alpha, "alpha", key)?;
                check_open_unit("alpha", alpha, key)?;
                Loss::JointVarEs { alpha }
            }
            _ => return Err(unknown()),
        };
        match &loss {
            Loss::Bregman { spec, .. } => spec.validate()?,
            Loss::Gpl { spec, .. } => spec.validate()?,
            _ => {}
        }
        Ok(loss)
    }

    fn check_dim(&self, xi: &ActionPoint) -> Result<(), LossError> {
        if xi.dim() != self.action_dim() {
            return Err(LossError::DimensionMismatch {
                expected: self.action_dim(),
                got: xi.dim(),
            });
        }
        Ok(())
    }
}

/// Canned non-strictly-convex φ used by the `bregman:pwl` key.
pub fn default_piecewise_linear() -> ConvexSpec {
    ConvexSpec::PiecewiseLinear {
        knots: vec![-0.75, 0.8],
        slopes: vec![-1.0, 0.15, 1.3],
    }
}

/// Canned non-strictly-increasing g used by the `gpl:step` key.
pub fn default_step() -> IncreasingSpec {
    IncreasingSpec::Step { knots: vec![-0.6, 0.3, 1.1] }
}

fn parse_param(part: &str, name: &str, key: &str) -> Result<f64, LossError> {
    let v = part
        .strip_prefix(&format!("{name}="))
        .ok_or_else(|| LossError::UnknownKey(key.to_string()))?;
    parse_float(v, key)
}

fn parse_float(s: &str, key: &str) -> Result<f64, LossError> {
    s.parse::<f64>()
        .map_err(|_| LossError::UnknownKey(key.to_string()))
}

fn check_open_unit(name: &str, v: f64, key: &str) -> Result<(), LossError> {
    if !(v > 0.0 && v < 1.0) {
        return Err(LossError::InvalidSpec(format!("{name}={v} outside (0,1) in '{key}'")));
    }
    Ok(())
}
