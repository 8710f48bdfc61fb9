//! Identification (moment) functions: canonical strict identification
//! functions per functional, the full class h(ξ)·φ generated by nonsingular
//! transforms, instrument composition ψ_A(y,x,θ) = A(x,θ)·φ(y,m(x,θ)), and
//! the instrument rank conditions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dgp::{ConditionalDGP, ParametricModel};
use crate::dist::Functional;
use crate::grid::GridSpec;

/// Full-rank threshold for instrument rank checks: smallest singular value
/// must exceed this, shared by both conditions.
pub const RANK_SV_TOL: f64 = 1e-8;

/// |det h(ξ)| below this fails the nonsingular-transform audit.
pub const SINGULAR_DET_TOL: f64 = 1e-12;

/// Central finite-difference step for the moment Jacobian D(x, θ′).
pub const JACOBIAN_FD_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("transform is singular at xi={xi:?} (|det| = {det:.3e})")]
    SingularTransform { xi: Vec<f64>, det: f64 },
    #[error("moment Jacobian is not finite at covariate atom {atom}")]
    NonFiniteJacobian { atom: usize },
    #[error("unknown instrument key '{0}'")]
    UnknownKey(String),
}

/// Whether a moment component is continuous in ξ or an indicator-type jump.
/// Indicator components of discrete laws have no exact zero at atoms and are
/// audited by sign-change bracketing instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Smooth,
    Indicator,
}

type PointEval = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type DetEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An ℝ^k-valued identification function φ(y, ξ) for a k-dimensional
/// functional.
#[derive(Clone)]
pub struct IdentificationFunction {
    pub k: usize,
    pub tag: String,
    component_kinds: Vec<ComponentKind>,
    eval: PointEval,
    /// |det| of the accumulated transform, when this φ arose from
    /// `transform`; audited on a grid, not at construction.
    transform_det: Option<DetEval>,
}

impl fmt::Debug for IdentificationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IdentificationFunction({}, k={})", self.tag, self.k)
    }
}

impl IdentificationFunction {
    pub fn evaluate(&self, y: f64, xi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xi.len(), self.k);
        (self.eval)(y, xi)
    }

    pub fn component_kinds(&self) -> &[ComponentKind] {
        &self.component_kinds
    }

    pub fn has_indicator_component(&self) -> bool {
        self.component_kinds.contains(&ComponentKind::Indicator)
    }

    /// The canonical strict identification function for each functional:
    /// Mean ↦ ξ−y; Quantile(α) ↦ 1{y≤ξ}−α; Expectile(τ) ↦ |τ−1{y≤ξ}|(ξ−y);
    /// VarEs(α) ↦ (1{y≤v}−α, e−v+(1/α)1{y≤v}(v−y)).
    pub fn canonical(functional: &Functional) -> Self {
        match *functional {
            Functional::Mean => Self {
                k: 1,
                tag: "mean".into(),
                component_kinds: vec![ComponentKind::Smooth],
                eval: Arc::new(|y, xi| vec![xi[0] - y]),
                transform_det: None,
            },
            Functional::Quantile { alpha } => Self {
                k: 1,
                tag: format!("quantile:alpha={alpha}"),
                component_kinds: vec![ComponentKind::Indicator],
                eval: Arc::new(move |y, xi| {
                    vec![if y <= xi[0] { 1.0 - alpha } else { -alpha }]
                }),
                transform_det: None,
            },
            Functional::Expectile { tau } => Self {
                k: 1,
                tag: format!("expectile:tau={tau}"),
                component_kinds: vec![ComponentKind::Smooth],
                eval: Arc::new(move |y, xi| {
                    let w = if y <= xi[0] { (tau - 1.0).abs() } else { tau };
                    vec![w * (xi[0] - y)]
                }),
                transform_det: None,
            },
            Functional::VarEs { alpha } => Self {
                k: 2,
                tag: format!("vares:alpha={alpha}"),
                component_kinds: vec![ComponentKind::Indicator, ComponentKind::Smooth],
                eval: Arc::new(move |y, xi| {
                    let (v, e) = (xi[0], xi[1]);
                    let ind = if y <= v { 1.0 } else { 0.0 };
                    vec![ind - alpha, e - v + ind * (v - y) / alpha]
                }),
                transform_det: None,
            },
        }
    }

    /// The class closure of Eq.-style transforms: (y,ξ) ↦ h(ξ)·φ(y,ξ) for a
    /// matrix map h. Nonsingularity of h is audited separately on a grid via
    /// [`IdentificationFunction::audit_transform_nonsingular`].
    pub fn transform<H>(&self, h: H, tag: &str) -> Self
    where
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let base = self.eval.clone();
        let k = self.k;
        let h = Arc::new(h);
        let h_for_det = h.clone();
        let prior_det = self.transform_det.clone();
        Self {
            k,
            tag: format!("{tag}∘{}", self.tag),
            // a nonsingular mix can spread jumps across components
            component_kinds: if self.has_indicator_component() {
                vec![ComponentKind::Indicator; k]
            } else {
                vec![ComponentKind::Smooth; k]
            },
            eval: Arc::new(move |y, xi| {
                let m = h(xi);
                debug_assert_eq!((m.nrows(), m.ncols()), (k, k));
                let v = DVector::from_vec(base(y, xi));
                (m * v).iter().copied().collect()
            }),
            transform_det: Some(Arc::new(move |xi: &[f64]| {
                let d = h_for_det(xi).determinant().abs();
                match &prior_det {
                    Some(p) => d * p(xi),
                    None => d,
                }
            })),
        }
    }

    /// Fails if the accumulated transform has |det h(ξ)| < tolerance at any
    /// audited grid node. Untransformed functions pass vacuously.
    pub fn audit_transform_nonsingular(&self, xi_grid: &GridSpec) -> Result<(), IdentError> {
        if let Some(det) = &self.transform_det {
            for xi in xi_grid.nodes() {
                let d = det(&xi);
                if d < SINGULAR_DET_TOL {
                    return Err(IdentError::SingularTransform { xi, det: d });
                }
            }
        }
        Ok(())
    }
}

type MatrixEval = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

/// A (q×k) instrument matrix A(x, θ).
#[derive(Clone)]
pub struct InstrumentMatrix {
    pub q: usize,
    pub k: usize,
    pub tag: String,
    eval: MatrixEval,
}

impl fmt::Debug for InstrumentMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InstrumentMatrix({}, {}x{})", self.tag, self.q, self.k)
    }
}

impl InstrumentMatrix {
    pub fn evaluate(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        (self.eval)(x, theta)
    }

    /// A ≡ matrix of ones.
    pub fn ones(q: usize, k: usize) -> Self {
        Self {
            q,
            k,
            tag: "ones".into(),
            eval: Arc::new(move |_, _| DMatrix::from_element(q, k, 1.0)),
        }
    }

    /// A ≡ 0, useful only to exercise rank failures.
    pub fn zero(q: usize, k: usize) -> Self {
        Self {
            q,
            k,
            tag: "zero".into(),
            eval: Arc::new(move |_, _| DMatrix::zeros(q, k)),
        }
    }

    /// A(x, θ) = x as a (p×1) column; k = 1, q = p.
    pub fn covariate(p: usize) -> Self {
        Self {
            q: p,
            k: 1,
            tag: "covariate".into(),
            eval: Arc::new(move |x, _| DMatrix::from_column_slice(p, 1, x)),
        }
    }

    /// A(x, θ) = (1, xᵀ)ᵀ as a ((p+1)×1) column; k = 1, q = p + 1.
    pub fn covariate_affine(p: usize) -> Self {
        Self {
            q: p + 1,
            k: 1,
            tag: "covariate-affine".into(),
            eval: Arc::new(move |x, _| {
                let mut col = Vec::with_capacity(p + 1);
                col.push(1.0);
                col.extend_from_slice(x);
                DMatrix::from_column_slice(p + 1, 1, &col)
            }),
        }
    }

    pub fn custom<F>(q: usize, k: usize, tag: &str, eval: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { q, k, tag: tag.into(), eval: Arc::new(eval) }
    }

    /// Parses the config keys `ones`, `covariate`, `covariate-affine`.
    pub fn parse_key(key: &str, p: usize, k: usize) -> Result<Self, IdentError> {
        match key {
            "ones" => Ok(Self::ones(p, k)),
            "covariate" if k == 1 => Ok(Self::covariate(p)),
            "covariate-affine" if k == 1 => Ok(Self::covariate_affine(p)),
            _ => Err(IdentError::UnknownKey(key.to_string())),
        }
    }
}

type ModelEval = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// How a model identification function was built.
#[derive(Clone)]
pub enum Provenance {
    /// φ(y, m(x,θ)), optionally premultiplied by an instrument A(x,θ).
    Composed {
        instrument: Option<InstrumentMatrix>,
        phi: IdentificationFunction,
        model: ParametricModel,
    },
    /// A hand-rolled ψ with no recorded structure.
    Raw,
}

/// A moment function ψ(y, x, θ) for the parameter functional θ₀.
#[derive(Clone)]
pub struct ModelIdentification {
    /// Output dimension; equals q for instrumented moments used in
    /// Z-estimation (exact identification), k for raw compositions.
    pub dim: usize,
    pub tag: String,
    pub provenance: Provenance,
    eval: ModelEval,
}

impl fmt::Debug for ModelIdentification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelIdentification({}, dim={})", self.tag, self.dim)
    }
}

impl ModelIdentification {
    pub fn evaluate(&self, y: f64, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (self.eval)(y, x, theta)
    }

    pub fn raw<F>(dim: usize, tag: &str, eval: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { dim, tag: tag.into(), provenance: Provenance::Raw, eval: Arc::new(eval) }
    }

    /// Un-instrumented composition (y,x,θ) ↦ φ(y, m(x,θ)), the object of the
    /// conditional moment propositions.
    pub fn composition(
        phi: &IdentificationFunction,
        model: &ParametricModel,
    ) -> Result<Self, IdentError> {
        if phi.k != model.output_dim() {
            return Err(IdentError::DimensionMismatch(format!(
                "phi has k={}, model outputs k={}",
                phi.k,
                model.output_dim()
            )));
        }
        let phi_c = phi.clone();
        let model_c = model.clone();
        Ok(Self {
            dim: phi.k,
            tag: format!("{}∘{}", phi.tag, model.key()),
            provenance: Provenance::Composed {
                instrument: None,
                phi: phi.clone(),
                model: model.clone(),
            },
            eval: Arc::new(move |y, x, theta| phi_c.evaluate(y, &model_c.eval(x, theta))),
        })
    }
}

/// Instrument composition ψ_A(y,x,θ) = A(x,θ)·φ(y, m(x,θ)), producing exactly
/// q moment conditions.
pub fn compose_instrument(
    instrument: &InstrumentMatrix,
    phi: &IdentificationFunction,
    model: &ParametricModel,
) -> Result<ModelIdentification, IdentError> {
    if instrument.k != phi.k || phi.k != model.output_dim() {
        return Err(IdentError::DimensionMismatch(format!(
            "instrument is {}x{}, phi has k={}, model outputs k={}",
            instrument.q,
            instrument.k,
            phi.k,
            model.output_dim()
        )));
    }
    if instrument.q != model.param_dim() {
        return Err(IdentError::DimensionMismatch(format!(
            "instrument provides {} moments, model has q={} parameters",
            instrument.q,
            model.param_dim()
        )));
    }
    let a = instrument.clone();
    let phi_c = phi.clone();
    let model_c = model.clone();
    let q = instrument.q;
    Ok(ModelIdentification {
        dim: q,
        tag: format!("{}·{}∘{}", instrument.tag, phi.tag, model.key()),
        provenance: Provenance::Composed {
            instrument: Some(instrument.clone()),
            phi: phi.clone(),
            model: model.clone(),
        },
        eval: Arc::new(move |y, x, theta| {
            let v = DVector::from_vec(phi_c.evaluate(y, &model_c.eval(x, theta)));
            (a.evaluate(x, theta) * v).iter().copied().collect()
        }),
    })
}

/// Exact conditional moment c(x, θ) = E[φ(Y, m(x,θ)) | X=x] at one atom.
fn conditional_moment(
    dgp: &ConditionalDGP,
    phi: &IdentificationFunction,
    atom: usize,
    theta: &[f64],
) -> Vec<f64> {
    let xi = dgp.model.eval(&dgp.covariate_atoms()[atom], theta);
    let cond = &dgp.conditionals()[atom];
    let mut acc = vec![0.0; phi.k];
    for (&y, &p) in cond.support().iter().zip(cond.probs()) {
        for (a, v) in acc.iter_mut().zip(phi.evaluate(y, &xi)) {
            *a += p * v;
        }
    }
    acc
}

/// The moment Jacobian D(x, θ′) = ∇_θ E[φ(Y, m(x,θ))|X=x] |_{θ=θ′} (k×q),
/// by central finite differences of the exact conditional expectation.
pub fn moment_jacobian(
    dgp: &ConditionalDGP,
    phi: &IdentificationFunction,
    atom: usize,
    theta_prime: &[f64],
) -> Result<DMatrix<f64>, IdentError> {
    let q = theta_prime.len();
    let k = phi.k;
    let mut jac = DMatrix::zeros(k, q);
    for j in 0..q {
        let mut up = theta_prime.to_vec();
        let mut dn = theta_prime.to_vec();
        up[j] += JACOBIAN_FD_STEP;
        dn[j] -= JACOBIAN_FD_STEP;
        let cu = conditional_moment(dgp, phi, atom, &up);
        let cd = conditional_moment(dgp, phi, atom, &dn);
        for i in 0..k {
            let d = (cu[i] - cd[i]) / (2.0 * JACOBIAN_FD_STEP);
            if !d.is_finite() {
                return Err(IdentError::NonFiniteJacobian { atom });
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

/// Result of the E[A(X,θ)·D(X,θ′)] full-rank check.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub full_rank: bool,
    pub matrix: DMatrix<f64>,
    pub smallest_singular_value: f64,
}

/// Checks whether E[A(X, θ)·D(X, θ′)] has full rank (smallest singular value
/// above [`RANK_SV_TOL`]), with D the finite-difference moment Jacobian of
/// the DGP functional's canonical φ and the expectation an exact sum over
/// covariate atoms.
pub fn rank_condition_s2(
    instrument: &InstrumentMatrix,
    dgp: &ConditionalDGP,
    theta: &[f64],
    theta_prime: &[f64],
) -> Result<RankReport, IdentError> {
    let phi = IdentificationFunction::canonical(&dgp.functional);
    let q = instrument.q;
    let mut acc = DMatrix::zeros(q, q);
    for atom in 0..dgp.n_atoms() {
        let a = instrument.evaluate(&dgp.covariate_atoms()[atom], theta);
        let d = moment_jacobian(dgp, &phi, atom, theta_prime)?;
        acc += dgp.covariate_probs()[atom] * a * d;
    }
    let sv = acc.clone().svd(false, false).singular_values;
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RankReport { full_rank: smallest > RANK_SV_TOL, matrix: acc, smallest_singular_value: smallest })
}

/// Checks rank(A(x, θ₀)) = k at every covariate atom (the almost-sure rank
/// condition becomes a per-atom one under finite covariate support).
pub fn rank_as_condition_s3(instrument: &InstrumentMatrix, dgp: &ConditionalDGP) -> bool {
    dgp.covariate_atoms().iter().all(|x| {
        let a = instrument.evaluate(x, &dgp.theta0);
        let sv = a.svd(false, false).singular_values;
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        sv.len() >= instrument.k && smallest > RANK_SV_TOL
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{ConditionalDGP, ModelFamily};
    use crate::dist::DiscreteDistribution;
    use crate::grid::BoxBounds;

    fn mean_dgp(theta0: f64, atoms: &[f64]) -> ConditionalDGP {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let conds: Vec<DiscreteDistribution> = atoms
            .iter()
            .map(|&x| {
                DiscreteDistribution::new(
                    &[theta0 * x - 1.0, theta0 * x + 1.0],
                    &[0.5, 0.5],
                )
                .unwrap()
            })
            .collect();
        ConditionalDGP::new(
            atoms.iter().map(|&x| vec![x]).collect(),
            vec![1.0 / atoms.len() as f64; atoms.len()],
            conds,
            model,
            Functional::Mean,
            vec![theta0],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap()
    }

    #[test]
    fn canonical_mean_vanishes_at_the_mean() {
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let u01 = DiscreteDistribution::new(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        let moment = u01.expectation(|y| phi.evaluate(y, &[0.5])[0]).unwrap();
        assert!(moment.abs() < 1e-15);

        let pm = DiscreteDistribution::point_mass(3.0);
        assert_eq!(pm.expectation(|y| phi.evaluate(y, &[3.0])[0]).unwrap(), 0.0);
    }

    #[test]
    fn quantile_moment_has_no_exact_zero_at_atoms() {
        let phi = IdentificationFunction::canonical(&Functional::quantile(0.5).unwrap());
        let u123 = DiscreteDistribution::new(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        let at_quantile = u123.expectation(|y| phi.evaluate(y, &[2.0])[0]).unwrap();
        assert!((at_quantile - 1.0 / 6.0).abs() < 1e-12);
        // but the sign changes across the quantile
        let below = u123.expectation(|y| phi.evaluate(y, &[1.5])[0]).unwrap();
        assert!(below < 0.0 && at_quantile > 0.0);
    }

    #[test]
    fn vares_smooth_component_vanishes_exactly() {
        let alpha = 0.5;
        let phi = IdentificationFunction::canonical(&Functional::var_es(alpha).unwrap());
        let u123 = DiscreteDistribution::new(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        let truth = [2.0, 4.0 / 3.0];
        let es_component = u123
            .expectation(|y| phi.evaluate(y, &truth)[1])
            .unwrap();
        assert!(es_component.abs() < 1e-12);
        assert_eq!(
            phi.component_kinds(),
            &[ComponentKind::Indicator, ComponentKind::Smooth]
        );
    }

    #[test]
    fn identity_transform_is_pointwise_identical() {
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let t = phi.transform(|_| DMatrix::identity(1, 1), "id");
        for (y, xi) in [(0.3, -1.0), (2.0, 0.5), (-1.5, 2.0)] {
            assert_eq!(phi.evaluate(y, &[xi]), t.evaluate(y, &[xi]));
        }
        t.audit_transform_nonsingular(&GridSpec::new_1d(-3.0, 3.0, 61)).unwrap();
    }

    #[test]
    fn scalar_transform_preserves_zero_set() {
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let scaled = phi.transform(|_| DMatrix::from_element(1, 1, 2.0), "x2");
        let poly = phi.transform(
            |xi| DMatrix::from_element(1, 1, xi[0] * xi[0] + 1.0),
            "quad",
        );
        let dist = DiscreteDistribution::new(&[-1.0, 0.5, 2.0], &[0.2, 0.5, 0.3]).unwrap();
        for xi in [-2.0, -0.5, dist.mean(), 1.0, 2.5] {
            let base = dist.expectation(|y| phi.evaluate(y, &[xi])[0]).unwrap();
            let s = dist.expectation(|y| scaled.evaluate(y, &[xi])[0]).unwrap();
            let p = dist.expectation(|y| poly.evaluate(y, &[xi])[0]).unwrap();
            assert!((s - 2.0 * base).abs() < 1e-12);
            assert!((p - (xi * xi + 1.0) * base).abs() < 1e-10);
            assert_eq!(base.abs() < 1e-12, s.abs() < 1e-12);
            assert_eq!(base.abs() < 1e-12, p.abs() < 2e-12);
        }
    }

    #[test]
    fn singular_transform_detected_on_grid() {
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let bad = phi.transform(|xi| DMatrix::from_element(1, 1, xi[0]), "xi");
        let err = bad
            .audit_transform_nonsingular(&GridSpec::new_1d(-1.0, 1.0, 21))
            .unwrap_err();
        assert!(matches!(err, IdentError::SingularTransform { .. }));
    }

    #[test]
    fn composition_example_s1_shape() {
        // ψ_A(y, x, θ) = x(xᵀθ − y) for the linear mean model with A = x
        let model = ParametricModel::new(
            ModelFamily::Linear,
            2,
            BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]),
        )
        .unwrap();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let a = InstrumentMatrix::covariate(2);
        let psi = compose_instrument(&a, &phi, &model).unwrap();
        assert_eq!(psi.dim, 2);
        let x = [1.5, -2.0];
        let theta = [0.5, 1.0];
        let y = 0.25;
        let resid = x[0] * theta[0] + x[1] * theta[1] - y;
        assert_eq!(psi.evaluate(y, &x, &theta), vec![x[0] * resid, x[1] * resid]);

        // A ≡ 1 with q = k = 1 reduces to the raw composition
        let model1 = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let psi1 = compose_instrument(&InstrumentMatrix::ones(1, 1), &phi, &model1).unwrap();
        let raw = ModelIdentification::composition(&phi, &model1).unwrap();
        for (y, x, t) in [(0.0, 1.0, 0.3), (1.0, -2.0, 0.8)] {
            assert_eq!(psi1.evaluate(y, &[x], &[t]), raw.evaluate(y, &[x], &[t]));
        }
    }

    #[test]
    fn composition_dimension_checks() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            2,
            BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]),
        )
        .unwrap();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        // instrument with wrong k
        let bad = InstrumentMatrix::ones(2, 2);
        assert!(compose_instrument(&bad, &phi, &model).is_err());
        // quantile phi with a two-moment affine instrument: q = 2, outputs ℝ²
        let phi_q = IdentificationFunction::canonical(&Functional::quantile(0.3).unwrap());
        let model1 = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let aff = InstrumentMatrix::covariate_affine(1);
        // model1 has q = 1 but the affine instrument provides 2 moments
        assert!(compose_instrument(&aff, &phi_q, &model1).is_err());
        let psi = compose_instrument(&InstrumentMatrix::covariate(1), &phi_q, &model1).unwrap();
        assert_eq!(psi.evaluate(0.0, &[2.0], &[1.0]).len(), 1);
    }

    #[test]
    fn rank_s2_example_s1() {
        // E[A·D] = E[XXᵀ] for A(x,θ) = x on the linear mean model
        let dgp = mean_dgp(1.5, &[-1.0, 1.0]);
        let report =
            rank_condition_s2(&InstrumentMatrix::covariate(1), &dgp, &[0.7], &[1.1]).unwrap();
        assert!(report.full_rank);
        assert!((report.matrix[(0, 0)] - 1.0).abs() < 1e-6); // E[X²] = 1

        let zero = rank_condition_s2(&InstrumentMatrix::zero(1, 1), &dgp, &[0.7], &[1.1]).unwrap();
        assert!(!zero.full_rank);

        // A ≡ 1 with E[X] = 0 gives E[A·D] = E[X] = 0
        let ones = rank_condition_s2(&InstrumentMatrix::ones(1, 1), &dgp, &[0.7], &[1.1]).unwrap();
        assert!(!ones.full_rank);
        assert!(ones.matrix[(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn rank_s3_per_atom() {
        let dgp = mean_dgp(1.5, &[-1.0, 1.0]);
        assert!(rank_as_condition_s3(&InstrumentMatrix::covariate(1), &dgp));
        assert!(!rank_as_condition_s3(&InstrumentMatrix::zero(1, 1), &dgp));

        // an atom at x = 0 drops the rank there
        let with_zero = mean_dgp(1.5, &[-1.0, 0.0, 1.0]);
        assert!(!rank_as_condition_s3(&InstrumentMatrix::covariate(1), &with_zero));
    }

    /// Instrument-transform equivalence: A′ = A/h(m(x,θ)) with φ′ = h·φ gives
    /// pointwise identical ψ values (k = 1).
    #[test]
    fn remark_s1_instrument_transform_equivalence() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let h = |xi: &[f64]| xi[0] * xi[0] + 1.0;
        let phi_prime = phi.transform(move |xi| DMatrix::from_element(1, 1, h(xi)), "h");
        let a = InstrumentMatrix::covariate(1);
        let model_c = model.clone();
        let a_prime = InstrumentMatrix::custom(1, 1, "covariate/h", move |x, theta| {
            let m = model_c.eval(x, theta);
            DMatrix::from_element(1, 1, x[0] / (m[0] * m[0] + 1.0))
        });
        let psi = compose_instrument(&a, &phi, &model).unwrap();
        let psi_prime = compose_instrument(&a_prime, &phi_prime, &model).unwrap();
        for (y, x, t) in [(0.1, 1.0, 0.5), (-2.0, -1.5, 2.0), (3.0, 0.5, -1.0)] {
            let lhs = psi.evaluate(y, &[x], &[t]);
            let rhs = psi_prime.evaluate(y, &[x], &[t]);
            assert!((lhs[0] - rhs[0]).abs() < 1e-12, "{lhs:?} vs {rhs:?}");
        }
    }
}
