//! Semiparametric conditional data-generating processes with finite covariate
//! support: correctly specified models, reweighting (conditioning on covariate
//! events), closure of a class under reweighting, and i.i.d. sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use thiserror::Error;

use crate::dist::{DiscreteDistribution, DistError, Functional};
use crate::grid::{inf_norm_dist, BoxBounds, GridSpec};

/// Per-atom tolerance for the correct-specification check
/// m(x, θ₀) = Γ(F_{Y|X=x}).
pub const ASSUMPTION1_TOL: f64 = 1e-10;

/// Model deviation below which a grid parameter counts as matching θ₀.
pub const UNIQUENESS_DEV_TOL: f64 = 1e-8;

/// Reweight-closure enumerates all covariate events only up to this many
/// atoms; beyond it, only singletons and one half-split are added.
pub const CLOSURE_ATOM_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("model disagrees with the functional at covariate atom {atom} (deviation {deviation:.3e})")]
    Misspecified { atom: usize, deviation: f64 },
    #[error("theta0 is not unique: grid point {theta:?} matches the model within {deviation:.3e}")]
    NonUnique { theta: Vec<f64>, deviation: f64 },
    #[error("theta0 lies on the boundary of the parameter box")]
    BoundaryParameter,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("conditioning event has zero probability")]
    NullEvent,
    #[error("class members must share model and functional: {0}")]
    MixedClass(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Strictly monotone link functions for `AffineLink` models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkFn {
    /// exp: ℝ → (0, ∞); pairs with positive-support responses.
    Exp,
    /// tanh: ℝ → (−1, 1); deliberately non-surjective onto ℝ.
    Tanh,
}

impl LinkFn {
    fn apply(self, t: f64) -> f64 {
        match self {
            LinkFn::Exp => t.exp(),
            LinkFn::Tanh => t.tanh(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            LinkFn::Exp => "exp",
            LinkFn::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily {
    /// m(x, θ) = xᵀθ, k = 1, q = p.
    Linear,
    /// m(x, θ) = link(xᵀθ), k = 1, q = p.
    AffineLink { link: LinkFn },
    /// Component-wise affine pair for (VaR, ES): k = 2, q = 2(p+1),
    /// m(x, θ) = (θ₀ + θ_{1..p}ᵀx, θ_{p+1} + θ_{p+2..}ᵀx).
    TwoDimAffine,
}

/// A parametric model m: ℝ^p × Θ → Ξ ⊆ ℝ^k with its parameter box Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricModel {
    pub family: ModelFamily,
    pub covariate_dim: usize,
    pub theta_box: BoxBounds,
}

impl ParametricModel {
    pub fn new(family: ModelFamily, covariate_dim: usize, theta_box: BoxBounds) -> Result<Self, DgpError> {
        let model = Self { family, covariate_dim, theta_box };
        if model.theta_box.dim() != model.param_dim() {
            return Err(DgpError::DimensionMismatch(format!(
                "theta box has dimension {}, model needs q={}",
                model.theta_box.dim(),
                model.param_dim()
            )));
        }
        Ok(model)
    }

    /// Parameter dimension q.
    pub fn param_dim(&self) -> usize {
        match self.family {
            ModelFamily::Linear | ModelFamily::AffineLink { .. } => self.covariate_dim,
            ModelFamily::TwoDimAffine => 2 * (self.covariate_dim + 1),
        }
    }

    /// Output dimension k.
    pub fn output_dim(&self) -> usize {
        match self.family {
            ModelFamily::TwoDimAffine => 2,
            _ => 1,
        }
    }

    pub fn eval(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.covariate_dim);
        debug_assert_eq!(theta.len(), self.param_dim());
        match &self.family {
            ModelFamily::Linear => vec![dot(x, theta)],
            ModelFamily::AffineLink { link } => vec![link.apply(dot(x, theta))],
            ModelFamily::TwoDimAffine => {
                let p = self.covariate_dim;
                let v = theta[0] + dot(x, &theta[1..=p]);
                let e = theta[p + 1] + dot(x, &theta[p + 2..]);
                vec![v, e]
            }
        }
    }

    /// Whether the atoms pin the parameter exactly: m(x,θ) = m(x,θ₀) on all
    /// listed atoms forces θ = θ₀. Exact linear-algebra check (the links are
    /// strictly monotone so they cancel).
    pub fn identified_on(&self, atoms: &[Vec<f64>]) -> bool {
        let (rows, cols): (usize, usize) = match self.family {
            ModelFamily::Linear | ModelFamily::AffineLink { .. } => {
                (atoms.len(), self.covariate_dim)
            }
            ModelFamily::TwoDimAffine => (atoms.len(), self.covariate_dim + 1),
        };
        if rows < cols {
            return false;
        }
        let design = DMatrix::from_fn(rows, cols, |i, j| match self.family {
            ModelFamily::Linear | ModelFamily::AffineLink { .. } => atoms[i][j],
            ModelFamily::TwoDimAffine => {
                if j == 0 {
                    1.0
                } else {
                    atoms[i][j - 1]
                }
            }
        });
        design.rank(1e-10) == cols
    }

    pub fn key(&self) -> String {
        match &self.family {
            ModelFamily::Linear => "linear".into(),
            ModelFamily::AffineLink { link } => format!("affine-link:{}", link.name()),
            ModelFamily::TwoDimAffine => "two-dim-affine".into(),
        }
    }

    /// Parses `linear`, `affine-link:exp`, `affine-link:tanh`,
    /// `two-dim-affine`.
    pub fn parse_key(key: &str, covariate_dim: usize, theta_box: BoxBounds) -> Result<Self, DgpError> {
        let family = match key {
            "linear" => ModelFamily::Linear,
            "affine-link:exp" => ModelFamily::AffineLink { link: LinkFn::Exp },
            "affine-link:tanh" => ModelFamily::AffineLink { link: LinkFn::Tanh },
            "two-dim-affine" => ModelFamily::TwoDimAffine,
            other => {
                return Err(DgpError::DimensionMismatch(format!("unknown model key '{other}'")))
            }
        };
        Self::new(family, covariate_dim, theta_box)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A validated element Z = (Y, X): finite covariate law, per-atom conditional
/// response laws, a correctly specified model and its unique true parameter.
#[derive(Debug, Clone)]
pub struct ConditionalDGP {
    covariate_atoms: Vec<Vec<f64>>,
    covariate_probs: Vec<f64>,
    conditionals: Vec<DiscreteDistribution>,
    pub model: ParametricModel,
    pub functional: Functional,
    pub theta0: Vec<f64>,
}

impl ConditionalDGP {
    /// Builds and fully validates a DGP: correct specification at every atom
    /// (within [`ASSUMPTION1_TOL`]) and uniqueness of θ₀ over `theta_grid`,
    /// with θ₀ strictly inside the parameter box.
    pub fn new(
        covariate_atoms: Vec<Vec<f64>>,
        covariate_probs: Vec<f64>,
        conditionals: Vec<DiscreteDistribution>,
        model: ParametricModel,
        functional: Functional,
        theta0: Vec<f64>,
        theta_grid: &GridSpec,
    ) -> Result<Self, DgpError> {
        let dgp = Self::assemble(
            covariate_atoms,
            covariate_probs,
            conditionals,
            model,
            functional,
            theta0,
        )?;
        dgp.check_correct_specification()?;
        dgp.check_uniqueness(theta_grid)?;
        Ok(dgp)
    }

    fn assemble(
        covariate_atoms: Vec<Vec<f64>>,
        covariate_probs: Vec<f64>,
        conditionals: Vec<DiscreteDistribution>,
        model: ParametricModel,
        functional: Functional,
        theta0: Vec<f64>,
    ) -> Result<Self, DgpError> {
        if covariate_atoms.len() != covariate_probs.len()
            || covariate_atoms.len() != conditionals.len()
            || covariate_atoms.is_empty()
        {
            return Err(DgpError::DimensionMismatch(
                "covariate atoms, probabilities and conditionals must have equal positive length"
                    .into(),
            ));
        }
        if covariate_atoms.iter().any(|x| x.len() != model.covariate_dim) {
            return Err(DgpError::DimensionMismatch(format!(
                "covariate atoms must have dimension p={}",
                model.covariate_dim
            )));
        }
        if theta0.len() != model.param_dim() {
            return Err(DgpError::DimensionMismatch(format!(
                "theta0 has length {}, model needs q={}",
                theta0.len(),
                model.param_dim()
            )));
        }
        if model.output_dim() != functional.output_dim() {
            return Err(DgpError::DimensionMismatch(format!(
                "model output dimension {} differs from functional dimension {}",
                model.output_dim(),
                functional.output_dim()
            )));
        }
        if covariate_probs.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(DgpError::Dist(DistError::NegativeProbability(
                *covariate_probs
                    .iter()
                    .find(|&&p| !p.is_finite() || p <= 0.0)
                    .unwrap(),
            )));
        }
        if !model.theta_box.strictly_contains(&theta0) {
            return Err(DgpError::BoundaryParameter);
        }
        let total: f64 = covariate_probs.iter().sum();
        let covariate_probs = covariate_probs.iter().map(|p| p / total).collect();
        Ok(Self {
            covariate_atoms,
            covariate_probs,
            conditionals,
            model,
            functional,
            theta0,
        })
    }

    /// Verifies m(x, θ₀) = Γ(F_{Y|X=x}) at every covariate atom.
    pub fn check_correct_specification(&self) -> Result<(), DgpError> {
        for (i, (x, cond)) in self.covariate_atoms.iter().zip(&self.conditionals).enumerate() {
            let target = self.functional.evaluate(cond);
            let modeled = self.model.eval(x, &self.theta0);
            let deviation = inf_norm_dist(&target.coords, &modeled);
            if deviation > ASSUMPTION1_TOL {
                return Err(DgpError::Misspecified { atom: i, deviation });
            }
        }
        Ok(())
    }

    fn model_deviation(&self, theta: &[f64]) -> f64 {
        self.covariate_atoms
            .iter()
            .map(|x| inf_norm_dist(&self.model.eval(x, theta), &self.model.eval(x, &self.theta0)))
            .fold(0.0, f64::max)
    }

    /// Scans the grid for a distant parameter matching the model on every
    /// atom. A near-match triggers one local mesh-halving refinement before
    /// `NonUnique` is declared, so duplicates sitting between nodes are not
    /// missed.
    fn check_uniqueness(&self, theta_grid: &GridSpec) -> Result<(), DgpError> {
        let mesh = theta_grid.max_mesh();
        let ball = 1.5 * mesh;
        const REFINE_TRIGGER: f64 = 1e-4;
        for theta in theta_grid.nodes() {
            if inf_norm_dist(&theta, &self.theta0) <= ball {
                continue;
            }
            let dev = self.model_deviation(&theta);
            if dev < UNIQUENESS_DEV_TOL {
                return Err(DgpError::NonUnique { theta, deviation: dev });
            }
            if dev < REFINE_TRIGGER {
                let (refined, refined_dev) = self.refine_near_match(&theta, mesh);
                if refined_dev < UNIQUENESS_DEV_TOL
                    && inf_norm_dist(&refined, &self.theta0) > ball
                {
                    return Err(DgpError::NonUnique { theta: refined, deviation: refined_dev });
                }
            }
        }
        Ok(())
    }

    /// One bisection pass: probes the 3^q half-mesh neighbors of a candidate.
    fn refine_near_match(&self, theta: &[f64], mesh: f64) -> (Vec<f64>, f64) {
        let q = theta.len();
        let mut best = (theta.to_vec(), self.model_deviation(theta));
        let mut offsets = vec![0i8; q];
        loop {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&offsets)
                .map(|(t, &o)| t + 0.5 * mesh * o as f64)
                .collect();
            let dev = self.model_deviation(&candidate);
            if dev < best.1 {
                best = (candidate, dev);
            }
            let mut d = 0;
            loop {
                if d == q {
                    return best;
                }
                offsets[d] += 1;
                if offsets[d] <= 1 {
                    break;
                }
                offsets[d] = -1;
                d += 1;
            }
        }
    }

    pub fn covariate_atoms(&self) -> &[Vec<f64>] {
        &self.covariate_atoms
    }

    pub fn covariate_probs(&self) -> &[f64] {
        &self.covariate_probs
    }

    pub fn conditionals(&self) -> &[DiscreteDistribution] {
        &self.conditionals
    }

    pub fn n_atoms(&self) -> usize {
        self.covariate_atoms.len()
    }

    /// Conditions the DGP on a covariate event (a set of atom indices):
    /// renormalizes the covariate law, keeps the surviving conditionals and
    /// the *same* model, functional and θ₀. Correct specification is
    /// re-verified; θ₀-uniqueness is a property of the whole class and is not
    /// re-scanned here.
    pub fn reweight(&self, event: &[usize]) -> Result<ConditionalDGP, DgpError> {
        let mut idx: Vec<usize> = event.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() || idx.iter().any(|&i| i >= self.n_atoms()) {
            return Err(DgpError::NullEvent);
        }
        let mass: f64 = idx.iter().map(|&i| self.covariate_probs[i]).sum();
        if mass <= 0.0 {
            return Err(DgpError::NullEvent);
        }
        let dgp = Self {
            covariate_atoms: idx.iter().map(|&i| self.covariate_atoms[i].clone()).collect(),
            covariate_probs: idx.iter().map(|&i| self.covariate_probs[i] / mass).collect(),
            conditionals: idx.iter().map(|&i| self.conditionals[i].clone()).collect(),
            model: self.model.clone(),
            functional: self.functional,
            theta0: self.theta0.clone(),
        };
        dgp.check_correct_specification()?;
        Ok(dgp)
    }

    /// T i.i.d. draws (x from the covariate law, then y from the matching
    /// conditional), deterministic in `seed`.
    pub fn sample(&self, n_rows: usize, seed: u64) -> Dataset {
        assert!(n_rows >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::with_capacity(n_rows);
        let mut xs = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut atom = self.n_atoms() - 1;
            for (i, &p) in self.covariate_probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    atom = i;
                    break;
                }
            }
            xs.push(self.covariate_atoms[atom].clone());
            ys.push(self.conditionals[atom].sample_one(&mut rng));
        }
        Dataset { ys, xs, seed }
    }
}

/// Sampled rows (Yₜ, Xₜ), t = 1..T, with seed provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ys: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.ys.iter().copied().zip(self.xs.iter().map(|x| x.as_slice()))
    }
}

/// A class 𝒵 of DGPs sharing model, functional and parameter box.
#[derive(Debug, Clone)]
pub struct DGPClass {
    pub members: Vec<ConditionalDGP>,
    /// Set once the class has been closed under covariate reweighting.
    pub reweight_closed: bool,
}

impl DGPClass {
    pub fn new(members: Vec<ConditionalDGP>) -> Result<Self, DgpError> {
        if members.is_empty() {
            return Err(DgpError::MixedClass("class must be nonempty".into()));
        }
        let first = &members[0];
        for m in &members[1..] {
            if m.model != first.model {
                return Err(DgpError::MixedClass("differing models".into()));
            }
            if m.functional != first.functional {
                return Err(DgpError::MixedClass("differing functionals".into()));
            }
        }
        Ok(Self { members, reweight_closed: false })
    }

    pub fn functional(&self) -> Functional {
        self.members[0].functional
    }

    pub fn model(&self) -> &ParametricModel {
        &self.members[0].model
    }

    /// Adds every reweighting of every member by a nonempty proper covariate
    /// event (all 2ⁿ−2 of them up to [`CLOSURE_ATOM_CAP`] atoms, singletons
    /// plus one half-split beyond). Events whose surviving atoms no longer
    /// pin θ₀ are skipped: such processes violate the unique-parameter
    /// requirement and hence cannot belong to the class.
    pub fn close_under_reweighting(&self) -> DGPClass {
        let mut members = self.members.clone();
        for dgp in &self.members {
            let n = dgp.n_atoms();
            let events: Vec<Vec<usize>> = if n <= CLOSURE_ATOM_CAP {
                (1u64..((1u64 << n) - 1))
                    .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
                    .collect()
            } else {
                let mut ev: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
                ev.push((0..n.div_ceil(2)).collect());
                ev
            };
            for event in events {
                let atoms: Vec<Vec<f64>> =
                    event.iter().map(|&i| dgp.covariate_atoms[i].clone()).collect();
                if !dgp.model.identified_on(&atoms) {
                    continue;
                }
                if let Ok(reweighted) = dgp.reweight(&event) {
                    members.push(reweighted);
                }
            }
        }
        DGPClass { members, reweight_closed: true }
    }

    /// Deduplicated union of all per-atom conditional response laws.
    pub fn extract_conditional_family(&self) -> Vec<DiscreteDistribution> {
        let mut family: Vec<DiscreteDistribution> = Vec::new();
        for dgp in &self.members {
            for cond in &dgp.conditionals {
                if !family.contains(cond) {
                    family.push(cond.clone());
                }
            }
        }
        family.sort_by(|a, b| {
            let key = |d: &DiscreteDistribution| (d.support().to_vec(), d.probs().to_vec());
            let (sa, pa) = key(a);
            let (sb, pb) = key(b);
            sa.iter()
                .chain(&pa)
                .zip(sb.iter().chain(&pb))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(sa.len().cmp(&sb.len()))
        });
        family
    }
}

/// Coverage of a ξ-grid by the map θ ↦ m(x, θ) over the parameter box.
#[derive(Debug, Clone)]
pub struct SurjectivityReport {
    pub points: Vec<(Vec<f64>, bool)>,
    pub coverage: f64,
}

/// Probes Assumption-2 surjectivity at one covariate atom: each ξ-grid node
/// counts as covered when some θ-grid node brings m(x, θ) within `tol`.
pub fn verify_surjectivity(
    model: &ParametricModel,
    x: &[f64],
    xi_grid: &GridSpec,
    theta_points_per_dim: usize,
    tol: f64,
) -> SurjectivityReport {
    let theta_grid = model.theta_box.grid(theta_points_per_dim);
    let images: Vec<Vec<f64>> = theta_grid.nodes().map(|t| model.eval(x, &t)).collect();
    let mut points = Vec::with_capacity(xi_grid.len());
    let mut hit = 0usize;
    for xi in xi_grid.nodes() {
        let covered = images.iter().any(|m| inf_norm_dist(m, &xi) < tol);
        hit += covered as usize;
        points.push((xi, covered));
    }
    let coverage = hit as f64 / points.len() as f64;
    SurjectivityReport { points, coverage }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Functional;

    pub(crate) fn mean_dgp_two_atoms(theta0: f64) -> ConditionalDGP {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let conditionals = vec![
            DiscreteDistribution::new(&[-theta0 - 1.0, -theta0 + 1.0], &[0.5, 0.5]).unwrap(),
            DiscreteDistribution::new(&[theta0 - 1.0, theta0 + 1.0], &[0.5, 0.5]).unwrap(),
        ];
        ConditionalDGP::new(
            vec![vec![-1.0], vec![1.0]],
            vec![0.5, 0.5],
            conditionals,
            model,
            Functional::Mean,
            vec![theta0],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap()
    }

    #[test]
    fn valid_mean_dgp_constructs() {
        let dgp = mean_dgp_two_atoms(1.5);
        assert_eq!(dgp.n_atoms(), 2);
        assert_eq!(dgp.theta0, vec![1.5]);
    }

    #[test]
    fn degenerate_covariate_is_non_unique() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let err = ConditionalDGP::new(
            vec![vec![0.0]],
            vec![1.0],
            vec![DiscreteDistribution::new(&[-1.0, 1.0], &[0.5, 0.5]).unwrap()],
            model,
            Functional::Mean,
            vec![1.0],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap_err();
        assert!(matches!(err, DgpError::NonUnique { .. }), "{err:?}");
    }

    #[test]
    fn wrong_conditional_mean_is_misspecified() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let err = ConditionalDGP::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![DiscreteDistribution::new(&[0.0, 1.0], &[0.5, 0.5]).unwrap()],
            model,
            Functional::Mean,
            vec![1.5],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap_err();
        assert!(matches!(err, DgpError::Misspecified { atom: 0, .. }), "{err:?}");
    }

    #[test]
    fn boundary_theta0_rejected() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let err = ConditionalDGP::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![DiscreteDistribution::new(&[4.0, 6.0], &[0.5, 0.5]).unwrap()],
            model,
            Functional::Mean,
            vec![5.0],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap_err();
        assert!(matches!(err, DgpError::BoundaryParameter), "{err:?}");
    }

    #[test]
    fn surjectivity_reports() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-10.0], vec![10.0]),
        )
        .unwrap();
        let grid = GridSpec::new_1d(-5.0, 5.0, 21);
        let full = verify_surjectivity(&model, &[1.0], &grid, 401, 0.05);
        assert_eq!(full.coverage, 1.0);

        let degenerate = verify_surjectivity(&model, &[0.0], &grid, 401, 0.05);
        // only ξ = 0 is reachable when x = 0
        assert!((degenerate.coverage - 1.0 / 21.0).abs() < 1e-12);

        let bounded = ParametricModel::new(
            ModelFamily::AffineLink { link: LinkFn::Tanh },
            1,
            BoxBounds::new(vec![-10.0], vec![10.0]),
        )
        .unwrap();
        let partial = verify_surjectivity(&bounded, &[1.0], &grid, 801, 0.05);
        assert!(partial.coverage > 0.0 && partial.coverage < 0.5, "{}", partial.coverage);
    }

    #[test]
    fn reweight_full_event_is_identity() {
        let dgp = mean_dgp_two_atoms(1.5);
        let same = dgp.reweight(&[0, 1]).unwrap();
        assert_eq!(same.covariate_atoms(), dgp.covariate_atoms());
        assert_eq!(same.covariate_probs(), dgp.covariate_probs());
        assert_eq!(same.conditionals(), dgp.conditionals());
    }

    #[test]
    fn reweight_singleton_keeps_theta0() {
        let dgp = mean_dgp_two_atoms(1.5);
        let restricted = dgp.reweight(&[1]).unwrap();
        assert_eq!(restricted.n_atoms(), 1);
        assert_eq!(restricted.covariate_probs(), &[1.0]);
        assert_eq!(restricted.theta0, vec![1.5]);
        restricted.check_correct_specification().unwrap();
    }

    #[test]
    fn reweight_null_event_errors() {
        let dgp = mean_dgp_two_atoms(1.5);
        assert!(matches!(dgp.reweight(&[]), Err(DgpError::NullEvent)));
        assert!(matches!(dgp.reweight(&[7]), Err(DgpError::NullEvent)));
    }

    #[test]
    fn closure_counts() {
        let two = DGPClass::new(vec![mean_dgp_two_atoms(1.5)]).unwrap();
        let closed = two.close_under_reweighting();
        assert!(closed.reweight_closed);
        assert_eq!(closed.members.len(), 1 + 2);

        // three atoms: 2^3 − 2 = 6 proper nonempty subsets
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let conds: Vec<DiscreteDistribution> = [-1.0f64, 1.0, 2.0]
            .iter()
            .map(|&x| {
                DiscreteDistribution::new(&[1.5 * x - 1.0, 1.5 * x + 1.0], &[0.5, 0.5]).unwrap()
            })
            .collect();
        let three = ConditionalDGP::new(
            vec![vec![-1.0], vec![1.0], vec![2.0]],
            vec![0.25, 0.5, 0.25],
            conds,
            model,
            Functional::Mean,
            vec![1.5],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap();
        let closed3 = DGPClass::new(vec![three]).unwrap().close_under_reweighting();
        assert_eq!(closed3.members.len(), 1 + 6);
    }

    #[test]
    fn closure_capped_beyond_twelve_atoms() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let xs: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        let conds: Vec<DiscreteDistribution> = xs
            .iter()
            .map(|&x| DiscreteDistribution::point_mass(1.5 * x))
            .collect();
        let dgp = ConditionalDGP::new(
            xs.iter().map(|&x| vec![x]).collect(),
            vec![0.05; 20],
            conds,
            model,
            Functional::Mean,
            vec![1.5],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap();
        let closed = DGPClass::new(vec![dgp]).unwrap().close_under_reweighting();
        // 20 singletons + 1 half-split
        assert_eq!(closed.members.len(), 1 + 20 + 1);
    }

    #[test]
    fn sampling_is_deterministic_and_concentrates() {
        let dgp = mean_dgp_two_atoms(1.5);
        let a = dgp.sample(5, 42);
        let b = dgp.sample(5, 42);
        assert_eq!(a, b);
        let c = dgp.sample(100, 43);
        assert_ne!(dgp.sample(100, 42), c);

        let big = dgp.sample(100_000, 7);
        let frac_plus =
            big.xs.iter().filter(|x| x[0] > 0.0).count() as f64 / big.len() as f64;
        assert!((frac_plus - 0.5).abs() < 0.01, "{frac_plus}");
    }

    #[test]
    fn empirical_conditional_means_concentrate() {
        let dgp = mean_dgp_two_atoms(1.5);
        let data = dgp.sample(100_000, 9);
        for (atom, x) in dgp.covariate_atoms().iter().enumerate() {
            let ys: Vec<f64> = data
                .rows()
                .filter(|(_, xs)| xs[0] == x[0])
                .map(|(y, _)| y)
                .collect();
            let exact = dgp.conditionals()[atom].mean();
            let empirical = ys.iter().sum::<f64>() / ys.len() as f64;
            // conditionals are ±1 around the mean, so std = 1
            let bound = 5.0 / ((data.len() as f64 * dgp.covariate_probs()[atom]).sqrt());
            assert!((empirical - exact).abs() < bound, "atom {atom}");
        }
    }

    #[test]
    fn point_mass_conditionals_sample_model_values() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-5.0], vec![5.0]),
        )
        .unwrap();
        let dgp = ConditionalDGP::new(
            vec![vec![-1.0], vec![2.0]],
            vec![0.5, 0.5],
            vec![
                DiscreteDistribution::point_mass(-1.5),
                DiscreteDistribution::point_mass(3.0),
            ],
            model,
            Functional::Mean,
            vec![1.5],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap();
        for (y, x) in dgp.sample(200, 3).rows() {
            assert_eq!(y, 1.5 * x[0]);
        }
    }

    #[test]
    fn conditional_family_dedups_and_ignores_reweighting() {
        let dgp = mean_dgp_two_atoms(1.5);
        let class = DGPClass::new(vec![dgp.clone()]).unwrap();
        let fam = class.extract_conditional_family();
        assert_eq!(fam.len(), 2);

        let closed = class.close_under_reweighting();
        assert_eq!(closed.extract_conditional_family(), fam);

        // a second DGP sharing one conditional adds only one new entry
        let other = ConditionalDGP::new(
            vec![vec![1.0], vec![2.0]],
            vec![0.5, 0.5],
            vec![
                DiscreteDistribution::new(&[0.5, 2.5], &[0.5, 0.5]).unwrap(),
                DiscreteDistribution::new(&[2.0, 4.0], &[0.5, 0.5]).unwrap(),
            ],
            dgp.model.clone(),
            Functional::Mean,
            vec![1.5],
            &GridSpec::new_1d(-5.0, 5.0, 41),
        )
        .unwrap();
        let both = DGPClass::new(vec![dgp, other]).unwrap();
        assert_eq!(both.extract_conditional_family().len(), 3);
    }
}
