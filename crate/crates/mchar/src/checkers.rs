//! Brute-force certification: consistency of losses for functionals,
//! conditional and unconditional model-consistency, identification checks,
//! the constructive reweighting counterexample, and the four-arrow
//! implication audit.
//!
//! All "almost surely" statements become for-all-atoms statements (exact
//! under finite covariate support), and all strictness certificates are
//! relative to a named grid and tolerance: equality means a gap within
//! ±tol, and candidate points within 1.5·mesh of the truth are excluded
//! from strictness scans.

use thiserror::Error;

use crate::dgp::{ConditionalDGP, DGPClass, DgpError};
use crate::dist::{ActionPoint, DiscreteDistribution, Functional};
use crate::grid::{inf_norm_dist, GridSpec};
use crate::identification::{ComponentKind, IdentificationFunction, ModelIdentification, Provenance};
use crate::losses::{Loss, LossError};

/// Default audit tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Strictness scans ignore candidates within this multiple of the grid mesh
/// around the true value.
pub const EXCLUSION_BALL_FACTOR: f64 = 1.5;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("loss not finite on the audited family: {0}")]
    NonFiniteLoss(String),
    #[error("moment not finite on the audited class")]
    NonFiniteValue,
    #[error("no violating event: every atom's conditional gap exceeds the tolerance")]
    NoViolatingEvent,
    #[error("counterexample postcondition failed: unconditional gap {gap:.3e} above tolerance")]
    PostconditionFailed { gap: f64 },
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

/// Verdict severity; the lattice used when folding over class members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    StrictlyConsistent,
    ConsistentNotStrict,
    Inconsistent,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::StrictlyConsistent => "strictly-consistent",
            Status::ConsistentNotStrict => "consistent-not-strict",
            Status::Inconsistent => "inconsistent",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        match s {
            "strictly-consistent" => Some(Status::StrictlyConsistent),
            "consistent-not-strict" => Some(Status::ConsistentNotStrict),
            "inconsistent" => Some(Status::Inconsistent),
            _ => None,
        }
    }
}

/// Where and by how much a non-strict or inconsistent verdict was observed.
/// For `Inconsistent`, `gap` is the positive improvement the witness point
/// achieves over the truth; for `ConsistentNotStrict` it is the (tiny)
/// expected-loss difference at the off-ball equalizer.
#[derive(Debug, Clone)]
pub struct Witness {
    /// Index of the distribution (family checks) or class member (model
    /// checks) exhibiting the gap.
    pub member: usize,
    /// The offending ξ or θ.
    pub point: Vec<f64>,
    pub gap: f64,
    /// Covariate atom, for per-atom conditional checks.
    pub atom: Option<usize>,
}

/// The grid a certificate is relative to.
#[derive(Debug, Clone)]
pub struct GridDescriptor {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_dim: usize,
    pub mesh: f64,
    pub tol: f64,
}

impl GridDescriptor {
    fn new(grid: &GridSpec, tol: f64) -> Self {
        Self {
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            points_per_dim: grid.points_per_dim,
            mesh: grid.max_mesh(),
            tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub status: Status,
    pub witness: Option<Witness>,
    pub grid: GridDescriptor,
}

impl Verdict {
    fn strict(grid: GridDescriptor) -> Self {
        Self { status: Status::StrictlyConsistent, witness: None, grid }
    }
}

/// Expected loss E_F[ρ(Y, ξ)]; `None` when ξ is outside the loss's declared
/// action domain (such nodes are skipped as comparators).
fn expected_loss(
    dist: &DiscreteDistribution,
    loss: &Loss,
    xi: &ActionPoint,
) -> Result<Option<f64>, CheckError> {
    let mut acc = 0.0;
    for (&y, &p) in dist.support().iter().zip(dist.probs()) {
        match loss.evaluate(y, xi) {
            Ok(v) if v.is_finite() => acc += p * v,
            Ok(v) => return Err(CheckError::NonFiniteLoss(format!("value {v} at y={y}"))),
            Err(LossError::Domain { .. }) => return Ok(None),
            Err(e) => return Err(CheckError::NonFiniteLoss(e.to_string())),
        }
    }
    Ok(Some(acc))
}

/// Definition-1 audit: is `loss` (strictly) consistent for `functional` on
/// the family, relative to `xi_grid` and `tol`? The functional value Γ(F) is
/// inserted into the comparator set automatically.
pub fn check_consistency(
    loss: &Loss,
    functional: &Functional,
    family: &[DiscreteDistribution],
    xi_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    assert_eq!(loss.action_dim(), functional.output_dim(), "loss/functional dimension mismatch");
    let ball = EXCLUSION_BALL_FACTOR * xi_grid.max_mesh();
    let descriptor = GridDescriptor::new(xi_grid, tol);
    let mut not_strict: Option<Witness> = None;

    for (fi, dist) in family.iter().enumerate() {
        let truth = functional.evaluate(dist);
        let e_truth = expected_loss(dist, loss, &truth)?.ok_or_else(|| {
            CheckError::NonFiniteLoss(format!("loss undefined at the functional value of family member {fi}"))
        })?;
        // witness for a violation is the best grid point, not the first found
        let mut violation: Option<Witness> = None;
        for xi in xi_grid.nodes().chain(std::iter::once(truth.coords.clone())) {
            let point = ActionPoint::new(xi.clone());
            let Some(e_xi) = expected_loss(dist, loss, &point)? else {
                continue;
            };
            let gap = e_truth - e_xi;
            if gap > tol && violation.as_ref().is_none_or(|w| gap > w.gap) {
                violation = Some(Witness { member: fi, point: xi.clone(), gap, atom: None });
            }
            if violation.is_none()
                && not_strict.is_none()
                && inf_norm_dist(&xi, &truth.coords) > ball
                && (e_xi - e_truth).abs() <= tol
            {
                not_strict = Some(Witness { member: fi, point: xi, gap: e_xi - e_truth, atom: None });
            }
        }
        if let Some(w) = violation {
            return Ok(Verdict { status: Status::Inconsistent, witness: Some(w), grid: descriptor });
        }
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

/// Per-atom expected loss at m(x, θ); `None` when the model output leaves
/// the loss's action domain (the parameter is then excluded as a comparator).
fn atom_expected_loss(
    dgp: &ConditionalDGP,
    loss: &Loss,
    atom: usize,
    theta: &[f64],
) -> Result<Option<f64>, CheckError> {
    let xi = ActionPoint::new(dgp.model.eval(&dgp.covariate_atoms()[atom], theta));
    expected_loss(&dgp.conditionals()[atom], loss, &xi)
}

fn all_atom_losses(
    dgp: &ConditionalDGP,
    loss: &Loss,
    theta: &[f64],
) -> Result<Option<Vec<f64>>, CheckError> {
    let mut out = Vec::with_capacity(dgp.n_atoms());
    for atom in 0..dgp.n_atoms() {
        match atom_expected_loss(dgp, loss, atom, theta)? {
            Some(v) => out.push(v),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

/// Definition-2(ii) audit on one DGP: the a.s. inequality
/// E[ρ(Y,m(X,θ₀))|X] ≤ E[ρ(Y,m(X,θ))|X] becomes per-covariate-atom;
/// strictness requires that no off-ball θ achieves equality at every atom.
pub fn check_conditional_mc(
    loss: &Loss,
    dgp: &ConditionalDGP,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    check_conditional_mc_indexed(loss, dgp, 0, theta_grid, tol)
}

fn check_conditional_mc_indexed(
    loss: &Loss,
    dgp: &ConditionalDGP,
    member: usize,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let ball = EXCLUSION_BALL_FACTOR * theta_grid.max_mesh();
    let descriptor = GridDescriptor::new(theta_grid, tol);
    let base = all_atom_losses(dgp, loss, &dgp.theta0)?.ok_or_else(|| {
        CheckError::NonFiniteLoss("loss undefined at m(x, theta0)".into())
    })?;
    let mut not_strict: Option<Witness> = None;

    let mut violation: Option<Witness> = None;
    for theta in theta_grid.nodes() {
        let Some(at_theta) = all_atom_losses(dgp, loss, &theta)? else {
            continue;
        };
        let mut max_abs_gap = 0.0f64;
        for (atom, (&e0, &et)) in base.iter().zip(&at_theta).enumerate() {
            let gap = e0 - et;
            if gap > tol && violation.as_ref().is_none_or(|w| gap > w.gap) {
                violation = Some(Witness { member, point: theta.clone(), gap, atom: Some(atom) });
            }
            max_abs_gap = max_abs_gap.max((et - e0).abs());
        }
        if violation.is_none()
            && not_strict.is_none()
            && inf_norm_dist(&theta, &dgp.theta0) > ball
            && max_abs_gap <= tol
        {
            not_strict = Some(Witness { member, point: theta, gap: max_abs_gap, atom: None });
        }
    }
    if let Some(w) = violation {
        return Ok(Verdict { status: Status::Inconsistent, witness: Some(w), grid: descriptor });
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

/// Covariate-averaged expected loss E[ρ(Y, m(X, θ))].
pub fn unconditional_expected_loss(
    dgp: &ConditionalDGP,
    loss: &Loss,
    theta: &[f64],
) -> Result<Option<f64>, CheckError> {
    let Some(atoms) = all_atom_losses(dgp, loss, theta)? else {
        return Ok(None);
    };
    Ok(Some(
        atoms.iter().zip(dgp.covariate_probs()).map(|(e, p)| e * p).sum(),
    ))
}

/// Definition-2(i) audit over a whole class: one covariate-averaged
/// expectation per member; strict requires θ₀ to be the unique grid
/// minimizer for every member.
pub fn check_unconditional_mc(
    loss: &Loss,
    class: &DGPClass,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let ball = EXCLUSION_BALL_FACTOR * theta_grid.max_mesh();
    let descriptor = GridDescriptor::new(theta_grid, tol);
    let mut not_strict: Option<Witness> = None;

    for (member, dgp) in class.members.iter().enumerate() {
        let e0 = unconditional_expected_loss(dgp, loss, &dgp.theta0)?.ok_or_else(|| {
            CheckError::NonFiniteLoss("loss undefined at m(x, theta0)".into())
        })?;
        let mut violation: Option<Witness> = None;
        for theta in theta_grid.nodes() {
            let Some(et) = unconditional_expected_loss(dgp, loss, &theta)? else {
                continue;
            };
            let gap = e0 - et;
            if gap > tol && violation.as_ref().is_none_or(|w| gap > w.gap) {
                violation = Some(Witness { member, point: theta.clone(), gap, atom: None });
            }
            if violation.is_none()
                && not_strict.is_none()
                && inf_norm_dist(&theta, &dgp.theta0) > ball
                && (et - e0).abs() <= tol
            {
                not_strict = Some(Witness { member, point: theta, gap: et - e0, atom: None });
            }
        }
        if let Some(w) = violation {
            return Ok(Verdict { status: Status::Inconsistent, witness: Some(w), grid: descriptor });
        }
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

/// Class-level conditional verdict: the severity-lattice fold of the
/// per-member conditional audits (order-independent).
pub fn check_conditional_mc_class(
    loss: &Loss,
    class: &DGPClass,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let mut worst: Option<Verdict> = None;
    for (member, dgp) in class.members.iter().enumerate() {
        let v = check_conditional_mc_indexed(loss, dgp, member, theta_grid, tol)?;
        worst = Some(match worst {
            None => v,
            Some(w) if v.status > w.status => v,
            Some(w) => w,
        });
        if worst.as_ref().unwrap().status == Status::Inconsistent {
            break;
        }
    }
    Ok(worst.expect("class is nonempty"))
}

/// The reweighted DGP realizing the proof of implication (iv), plus the
/// re-verified unconditional gap at θ_bad.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub dgp: ConditionalDGP,
    pub event: Vec<usize>,
    pub unconditional_gap: f64,
}

/// Conditions `dgp` on the event A = {x : E[ρ(θ_bad)|x] − E[ρ(θ₀)|x] ≤ tol},
/// the atoms where strict conditional model-consistency fails at θ_bad. On
/// the reweighted DGP the unconditional gap at θ_bad is ≤ tol, certifying
/// failure of strict unconditional model-consistency; the postcondition is
/// re-verified numerically.
pub fn construct_counterexample_dgp(
    loss: &Loss,
    dgp: &ConditionalDGP,
    theta_bad: &[f64],
    tol: f64,
) -> Result<Counterexample, CheckError> {
    let base = all_atom_losses(dgp, loss, &dgp.theta0)?.ok_or_else(|| {
        CheckError::NonFiniteLoss("loss undefined at m(x, theta0)".into())
    })?;
    let at_bad = all_atom_losses(dgp, loss, theta_bad)?.ok_or_else(|| {
        CheckError::NonFiniteLoss("loss undefined at m(x, theta_bad)".into())
    })?;
    let event: Vec<usize> = base
        .iter()
        .zip(&at_bad)
        .enumerate()
        .filter(|(_, (&e0, &eb))| eb - e0 <= tol)
        .map(|(i, _)| i)
        .collect();
    if event.is_empty() {
        return Err(CheckError::NoViolatingEvent);
    }
    let reweighted = dgp.reweight(&event)?;
    let e0 = unconditional_expected_loss(&reweighted, loss, &reweighted.theta0)?
        .expect("theta0 evaluable on the reweighted DGP");
    let eb = unconditional_expected_loss(&reweighted, loss, theta_bad)?
        .expect("theta_bad evaluable on the reweighted DGP");
    let gap = eb - e0;
    if gap > tol {
        return Err(CheckError::PostconditionFailed { gap });
    }
    Ok(Counterexample { dgp: reweighted, event, unconditional_gap: gap })
}

/// Outcome of one implication arrow.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrowOutcome {
    Confirmed,
    CounterexampleFound(String),
    NotApplicable(String),
}

impl ArrowOutcome {
    pub fn violated(&self) -> bool {
        matches!(self, ArrowOutcome::CounterexampleFound(_))
    }

    pub fn label(&self) -> String {
        match self {
            ArrowOutcome::Confirmed => "confirmed".into(),
            ArrowOutcome::CounterexampleFound(d) => format!("counterexample: {d}"),
            ArrowOutcome::NotApplicable(d) => format!("not-applicable: {d}"),
        }
    }
}

/// Grids and tolerances shared by one audit cell.
#[derive(Debug, Clone)]
pub struct AuditGrids {
    pub xi_grid: GridSpec,
    pub theta_grid: GridSpec,
    pub tol: f64,
    /// θ-grid density for the Assumption-2 surjectivity probe.
    pub surjectivity_points: usize,
    pub surjectivity_tol: f64,
}

/// Numeric record of the proof-of-(iv) constructive check, produced whenever
/// conditional strictness fails on a reweight-closed class.
#[derive(Debug, Clone)]
pub struct ConstructiveCheck {
    pub member: usize,
    pub theta_bad: Vec<f64>,
    pub event: Vec<usize>,
    pub unconditional_gap: f64,
    pub passed: bool,
}

/// Per-arrow outcomes of the consistency hierarchy on one
/// (loss, functional, class) cell.
#[derive(Debug, Clone)]
pub struct ImplicationReport {
    pub loss_key: String,
    pub family_verdict: Verdict,
    pub conditional_verdict: Verdict,
    pub unconditional_verdict: Verdict,
    pub arrow_i: ArrowOutcome,
    pub arrow_ii: ArrowOutcome,
    pub arrow_iii: ArrowOutcome,
    pub arrow_iv: ArrowOutcome,
    pub constructive_check: Option<ConstructiveCheck>,
}

impl ImplicationReport {
    pub fn arrows(&self) -> [(&'static str, &ArrowOutcome); 4] {
        [
            ("i", &self.arrow_i),
            ("ii", &self.arrow_ii),
            ("iii", &self.arrow_iii),
            ("iv", &self.arrow_iv),
        ]
    }

    pub fn any_violation(&self) -> bool {
        self.arrows().iter().any(|(_, a)| a.violated())
            || self.constructive_check.as_ref().is_some_and(|c| !c.passed)
    }
}

/// Runs the full hierarchy audit for one loss and one reweight-closed class:
/// consistency on the extracted conditional family, conditional and
/// unconditional model-consistency, the four implication arrows, and the
/// constructive counterexample whenever conditional strictness fails.
pub fn theorem1_audit(
    loss: &Loss,
    class: &DGPClass,
    grids: &AuditGrids,
) -> Result<ImplicationReport, CheckError> {
    let tol = grids.tol;
    let functional = class.functional();
    let family = class.extract_conditional_family();

    let family_verdict = check_consistency(loss, &functional, &family, &grids.xi_grid, tol)?;
    let conditional_verdict = check_conditional_mc_class(loss, class, &grids.theta_grid, tol)?;
    let unconditional_verdict = check_unconditional_mc(loss, class, &grids.theta_grid, tol)?;

    // (i) (strict) consistency for Γ ⇒ (strict) conditional model-consistency
    let arrow_i = match family_verdict.status {
        Status::Inconsistent => {
            ArrowOutcome::NotApplicable("premise fails: loss not consistent for the functional".into())
        }
        Status::StrictlyConsistent => {
            if conditional_verdict.status == Status::StrictlyConsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(format!(
                    "strictly consistent for the functional but conditional verdict is {}",
                    conditional_verdict.status.as_str()
                ))
            }
        }
        Status::ConsistentNotStrict => {
            if conditional_verdict.status != Status::Inconsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(
                    "consistent for the functional but conditionally inconsistent".into(),
                )
            }
        }
    };

    // (ii) conditional model-consistency ⇒ consistency for Γ on the extracted
    // family, restricted to the model's image (Assumption-2 surjectivity).
    let arrow_ii = if conditional_verdict.status == Status::Inconsistent {
        ArrowOutcome::NotApplicable("premise fails: not conditionally model-consistent".into())
    } else {
        audit_arrow_ii(loss, class, grids)?
    };

    // (iii) (strict) conditional ⇒ (strict) unconditional model-consistency
    let arrow_iii = match conditional_verdict.status {
        Status::Inconsistent => {
            ArrowOutcome::NotApplicable("premise fails: not conditionally model-consistent".into())
        }
        Status::StrictlyConsistent => {
            if unconditional_verdict.status == Status::StrictlyConsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(format!(
                    "conditionally strict but unconditional verdict is {}",
                    unconditional_verdict.status.as_str()
                ))
            }
        }
        Status::ConsistentNotStrict => {
            if unconditional_verdict.status != Status::Inconsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(
                    "conditionally consistent but unconditionally inconsistent".into(),
                )
            }
        }
    };

    // (iv) under reweight-closure, (strict) unconditional ⇒ (strict)
    // conditional model-consistency
    let arrow_iv = if !class.reweight_closed {
        ArrowOutcome::NotApplicable("class not closed under reweighting (Assumption 3)".into())
    } else {
        match unconditional_verdict.status {
            Status::Inconsistent => {
                ArrowOutcome::NotApplicable("premise fails: not unconditionally model-consistent".into())
            }
            Status::StrictlyConsistent => {
                if conditional_verdict.status == Status::StrictlyConsistent {
                    ArrowOutcome::Confirmed
                } else {
                    ArrowOutcome::CounterexampleFound(format!(
                        "unconditionally strict on a closed class but conditional verdict is {}",
                        conditional_verdict.status.as_str()
                    ))
                }
            }
            Status::ConsistentNotStrict => {
                if conditional_verdict.status != Status::Inconsistent {
                    ArrowOutcome::Confirmed
                } else {
                    ArrowOutcome::CounterexampleFound(
                        "unconditionally consistent on a closed class but conditionally inconsistent"
                            .into(),
                    )
                }
            }
        }
    };

    // Proof-of-(iv) machinery: when conditional strictness fails on a closed
    // class, the reweighting event must exhibit an unconditional gap ≤ tol.
    let constructive_check = if class.reweight_closed
        && conditional_verdict.status != Status::StrictlyConsistent
        && conditional_verdict.witness.is_some()
    {
        let w = conditional_verdict.witness.as_ref().unwrap();
        let member = &class.members[w.member];
        match construct_counterexample_dgp(loss, member, &w.point, tol) {
            Ok(ce) => Some(ConstructiveCheck {
                member: w.member,
                theta_bad: w.point.clone(),
                event: ce.event,
                unconditional_gap: ce.unconditional_gap,
                passed: true,
            }),
            Err(CheckError::PostconditionFailed { gap }) => Some(ConstructiveCheck {
                member: w.member,
                theta_bad: w.point.clone(),
                event: Vec::new(),
                unconditional_gap: gap,
                passed: false,
            }),
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(ImplicationReport {
        loss_key: loss.key(),
        family_verdict,
        conditional_verdict,
        unconditional_verdict,
        arrow_i,
        arrow_ii,
        arrow_iii,
        arrow_iv,
        constructive_check,
    })
}

/// Arrow (ii) conclusion: non-strict consistency of the loss on each
/// conditional law, with comparators restricted to the per-atom model image
/// (the ξ-grid nodes reachable by θ ↦ m(x, θ) over the parameter box).
fn audit_arrow_ii(
    loss: &Loss,
    class: &DGPClass,
    grids: &AuditGrids,
) -> Result<ArrowOutcome, CheckError> {
    let functional = class.functional();
    let tol = grids.tol;
    // reweighted members share covariate atoms with their base DGP; probe
    // the model image once per distinct atom
    let mut coverage_cache: std::collections::HashMap<Vec<u64>, std::rc::Rc<crate::dgp::SurjectivityReport>> =
        std::collections::HashMap::new();
    for dgp in &class.members {
        for atom in 0..dgp.n_atoms() {
            let x = &dgp.covariate_atoms()[atom];
            let key: Vec<u64> = x.iter().map(|c| c.to_bits()).collect();
            let report = coverage_cache
                .entry(key)
                .or_insert_with(|| {
                    std::rc::Rc::new(crate::dgp::verify_surjectivity(
                        &dgp.model,
                        x,
                        &grids.xi_grid,
                        grids.surjectivity_points,
                        grids.surjectivity_tol,
                    ))
                })
                .clone();
            if report.coverage == 0.0 {
                return Ok(ArrowOutcome::NotApplicable(
                    "Assumption 2 fails: model image misses the audited action grid".into(),
                ));
            }
            let dist = &dgp.conditionals()[atom];
            let truth = functional.evaluate(dist);
            let e_truth = expected_loss(dist, loss, &truth)?.ok_or_else(|| {
                CheckError::NonFiniteLoss("loss undefined at the functional value".into())
            })?;
            for (xi, covered) in &report.points {
                if !covered {
                    continue;
                }
                let Some(e_xi) = expected_loss(dist, loss, &ActionPoint::new(xi.clone()))? else {
                    continue;
                };
                if e_truth - e_xi > tol {
                    return Ok(ArrowOutcome::CounterexampleFound(format!(
                        "conditionally model-consistent, yet xi={xi:?} beats the functional value by {:.3e}",
                        e_truth - e_xi
                    )));
                }
            }
        }
    }
    Ok(ArrowOutcome::Confirmed)
}

/// Exact per-atom conditional moment E[ψ(Y, x, θ) | X=x].
pub fn conditional_moment(
    psi: &ModelIdentification,
    dgp: &ConditionalDGP,
    atom: usize,
    theta: &[f64],
) -> Result<Vec<f64>, CheckError> {
    let x = &dgp.covariate_atoms()[atom];
    let cond = &dgp.conditionals()[atom];
    let mut acc = vec![0.0; psi.dim];
    for (&y, &p) in cond.support().iter().zip(cond.probs()) {
        let v = psi.evaluate(y, x, theta);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(CheckError::NonFiniteValue);
        }
        for (a, c) in acc.iter_mut().zip(v) {
            *a += p * c;
        }
    }
    Ok(acc)
}

/// Covariate-averaged moment E[ψ(Y, X, θ)].
pub fn unconditional_moment(
    psi: &ModelIdentification,
    dgp: &ConditionalDGP,
    theta: &[f64],
) -> Result<Vec<f64>, CheckError> {
    let mut acc = vec![0.0; psi.dim];
    for atom in 0..dgp.n_atoms() {
        let m = conditional_moment(psi, dgp, atom, theta)?;
        for (a, c) in acc.iter_mut().zip(m) {
            *a += dgp.covariate_probs()[atom] * c;
        }
    }
    Ok(acc)
}

/// Probe offset for the sign-change test of indicator moment components:
/// far below any support gap or grid mesh, yet far above the 1e-10 noise a
/// validated model value may carry.
fn bracket_delta(xi0: f64) -> f64 {
    1e-8 * (1.0 + xi0.abs())
}

/// Exact moment E_F[φ(Y, ξ)].
fn phi_moment(
    phi: &IdentificationFunction,
    dist: &DiscreteDistribution,
    xi: &[f64],
) -> Result<Vec<f64>, CheckError> {
    let mut acc = vec![0.0; phi.k];
    for (&y, &p) in dist.support().iter().zip(dist.probs()) {
        let v = phi.evaluate(y, xi);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(CheckError::NonFiniteValue);
        }
        for (a, c) in acc.iter_mut().zip(v) {
            *a += p * c;
        }
    }
    Ok(acc)
}

/// Zero test for an identification function at ξ on one distribution.
///
/// Smooth components must vanish within tol at ξ. Indicator components
/// (quantile-type jumps in the first ξ-coordinate) have no exact zero on
/// discrete laws; they pass exactly when the expected component changes sign
/// across ξ: nonnegative (within tol) just above and nonpositive (within
/// tol) just below, i.e. the jump across the level α happens at ξ itself.
fn phi_zero_at(
    phi: &IdentificationFunction,
    dist: &DiscreteDistribution,
    xi: &[f64],
    tol: f64,
) -> Result<bool, CheckError> {
    let at_xi = phi_moment(phi, dist, xi)?;
    let mut sides: Option<(Vec<f64>, Vec<f64>)> = None;
    for (j, kind) in phi.component_kinds().iter().enumerate() {
        match kind {
            ComponentKind::Smooth => {
                if at_xi[j].abs() > tol {
                    return Ok(false);
                }
            }
            ComponentKind::Indicator => {
                if sides.is_none() {
                    let delta = bracket_delta(xi[0]);
                    let mut above = xi.to_vec();
                    let mut below = xi.to_vec();
                    above[0] += delta;
                    below[0] -= delta;
                    sides = Some((phi_moment(phi, dist, &above)?, phi_moment(phi, dist, &below)?));
                }
                let (above, below) = sides.as_ref().unwrap();
                if !(above[j] >= -tol && below[j] <= tol) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Zero test for a composed moment at one covariate atom, at ξ = m(x, θ).
fn composed_zero_at(
    phi: &IdentificationFunction,
    dgp: &ConditionalDGP,
    atom: usize,
    theta: &[f64],
    tol: f64,
) -> Result<bool, CheckError> {
    let xi = dgp.model.eval(&dgp.covariate_atoms()[atom], theta);
    phi_zero_at(phi, &dgp.conditionals()[atom], &xi, tol)
}

/// Definition-S1 audit on a family of distributions: the expected
/// identification function must vanish at Γ(F) for every member (bracketing
/// for indicator components) and at no off-ball grid ξ.
pub fn check_identification_on_family(
    phi: &IdentificationFunction,
    functional: &Functional,
    family: &[DiscreteDistribution],
    xi_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let ball = EXCLUSION_BALL_FACTOR * xi_grid.max_mesh();
    let descriptor = GridDescriptor::new(xi_grid, tol);
    let mut not_strict: Option<Witness> = None;

    for (fi, dist) in family.iter().enumerate() {
        let truth = functional.evaluate(dist);
        if !phi_zero_at(phi, dist, &truth.coords, tol)? {
            let m = phi_moment(phi, dist, &truth.coords)?;
            let gap = m.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            return Ok(Verdict {
                status: Status::Inconsistent,
                witness: Some(Witness { member: fi, point: truth.coords, gap, atom: None }),
                grid: descriptor,
            });
        }
        if not_strict.is_some() {
            continue;
        }
        for xi in xi_grid.nodes() {
            if inf_norm_dist(&xi, &truth.coords) <= ball {
                continue;
            }
            if phi_zero_at(phi, dist, &xi, tol)? {
                let m = phi_moment(phi, dist, &xi)?;
                let gap = m.iter().fold(0.0f64, |a, c| a.max(c.abs()));
                not_strict = Some(Witness { member: fi, point: xi, gap, atom: None });
                break;
            }
        }
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

/// Whether the conditional moment vanishes (in the exact or bracketing
/// sense) at every covariate atom of `dgp` for the parameter `theta`.
///
/// Composed moments built on an indicator-type φ are bracketed at the φ
/// level: E[φ|x] ≈ 0 forces A·E[φ|x] ≈ 0, so zero-at-θ₀ stays sound, and
/// accepting θ's regardless of the instrument errs toward non-strictness.
fn conditional_zero_everywhere(
    psi: &ModelIdentification,
    dgp: &ConditionalDGP,
    theta: &[f64],
    tol: f64,
) -> Result<bool, CheckError> {
    match &psi.provenance {
        Provenance::Composed { phi, .. } if phi.has_indicator_component() => {
            for atom in 0..dgp.n_atoms() {
                if !composed_zero_at(phi, dgp, atom, theta, tol)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        _ => {
            for atom in 0..dgp.n_atoms() {
                let m = conditional_moment(psi, dgp, atom, theta)?;
                if m.iter().any(|c| c.abs() > tol) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Definition-S2(ii) audit: ψ must vanish conditionally at θ₀ for every
/// class member, and at no off-ball grid θ.
pub fn check_conditional_identification(
    psi: &ModelIdentification,
    class: &DGPClass,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let ball = EXCLUSION_BALL_FACTOR * theta_grid.max_mesh();
    let descriptor = GridDescriptor::new(theta_grid, tol);
    let mut not_strict: Option<Witness> = None;

    for (member, dgp) in class.members.iter().enumerate() {
        if !conditional_zero_everywhere(psi, dgp, &dgp.theta0, tol)? {
            let gap = max_conditional_moment_norm(psi, dgp, &dgp.theta0)?;
            return Ok(Verdict {
                status: Status::Inconsistent,
                witness: Some(Witness { member, point: dgp.theta0.clone(), gap, atom: None }),
                grid: descriptor,
            });
        }
        for theta in theta_grid.nodes() {
            if inf_norm_dist(&theta, &dgp.theta0) <= ball {
                continue;
            }
            if not_strict.is_none() && conditional_zero_everywhere(psi, dgp, &theta, tol)? {
                let gap = max_conditional_moment_norm(psi, dgp, &theta)?;
                not_strict = Some(Witness { member, point: theta, gap, atom: None });
            }
        }
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

fn max_conditional_moment_norm(
    psi: &ModelIdentification,
    dgp: &ConditionalDGP,
    theta: &[f64],
) -> Result<f64, CheckError> {
    let mut worst = 0.0f64;
    for atom in 0..dgp.n_atoms() {
        let m = conditional_moment(psi, dgp, atom, theta)?;
        worst = worst.max(m.iter().fold(0.0f64, |a, c| a.max(c.abs())));
    }
    Ok(worst)
}

/// Per-arrow outcomes of the identification hierarchy (the supplement's
/// propositions) on one (φ, instrument, class) cell.
#[derive(Debug, Clone)]
pub struct PropositionsReport {
    /// Definition-S1 verdict of φ on the extracted conditional family.
    pub family_verdict: Verdict,
    /// Conditional verdict of the raw composition φ(y, m(x,θ)).
    pub conditional_verdict: Verdict,
    /// Unconditional verdict of the instrumented ψ_A.
    pub unconditional_verdict: Verdict,
    /// strict φ on the family ⇒ strict conditional identification of φ∘m.
    pub s1_forward: ArrowOutcome,
    /// φ∘m conditional identification function ⇒ φ identification function.
    pub s1_reverse: ArrowOutcome,
    /// full-rank E[A·D] on the segment ⇒ ψ_A strict unconditional.
    pub s2: ArrowOutcome,
    /// a.s. full-rank A(·,θ₀) + ψ_A strict unconditional ⇒ φ∘m strict conditional.
    pub s3: ArrowOutcome,
}

impl PropositionsReport {
    pub fn arrows(&self) -> [(&'static str, &ArrowOutcome); 4] {
        [
            ("S1(i)", &self.s1_forward),
            ("S1(ii)", &self.s1_reverse),
            ("S2", &self.s2),
            ("S3", &self.s3),
        ]
    }

    pub fn any_violation(&self) -> bool {
        self.arrows().iter().any(|(_, a)| a.violated())
    }
}

/// Audits the identification-function counterparts of the hierarchy: the
/// two directions of the conditional-moment proposition, the instrument
/// rank condition, and its reverse-engineering converse.
pub fn propositions_audit(
    phi: &IdentificationFunction,
    instrument: &crate::identification::InstrumentMatrix,
    class: &DGPClass,
    xi_grid: &GridSpec,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<PropositionsReport, CheckError> {
    use crate::identification::{compose_instrument, rank_as_condition_s3, rank_condition_s2};

    let functional = class.functional();
    let model = class.model().clone();
    let family = class.extract_conditional_family();

    let family_verdict = check_identification_on_family(phi, &functional, &family, xi_grid, tol)?;
    let raw = ModelIdentification::composition(phi, &model)
        .map_err(|e| CheckError::NonFiniteLoss(e.to_string()))?;
    let conditional_verdict = check_conditional_identification(&raw, class, theta_grid, tol)?;
    let psi_a = compose_instrument(instrument, phi, &model)
        .map_err(|e| CheckError::NonFiniteLoss(e.to_string()))?;
    let unconditional_verdict =
        check_unconditional_identification(&psi_a, class, theta_grid, tol)?;

    let s1_forward = match family_verdict.status {
        Status::Inconsistent => ArrowOutcome::NotApplicable(
            "premise fails: phi is not an identification function on the family".into(),
        ),
        Status::StrictlyConsistent => {
            if conditional_verdict.status == Status::StrictlyConsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(format!(
                    "phi strict on the family but conditional verdict is {}",
                    conditional_verdict.status.as_str()
                ))
            }
        }
        Status::ConsistentNotStrict => {
            if conditional_verdict.status != Status::Inconsistent {
                ArrowOutcome::Confirmed
            } else {
                ArrowOutcome::CounterexampleFound(
                    "phi identifies on the family but fails conditionally".into(),
                )
            }
        }
    };

    let s1_reverse = if conditional_verdict.status == Status::Inconsistent {
        ArrowOutcome::NotApplicable(
            "premise fails: phi∘m is not a conditional identification function".into(),
        )
    } else if family_verdict.status != Status::Inconsistent {
        ArrowOutcome::Confirmed
    } else {
        ArrowOutcome::CounterexampleFound(
            "phi∘m identifies conditionally but phi has a nonzero at Γ(F)".into(),
        )
    };

    // Proposition-S2 premise: E[A(X,θ)·D(X,θ′)] full rank for θ on a grid
    // subsample and θ′ on the segment [θ₀, θ].
    let mut rank_premise = true;
    'outer: for dgp in &class.members {
        let stride = (theta_grid.len() / 20).max(1);
        for (i, theta) in theta_grid.nodes().enumerate() {
            if i % stride != 0 {
                continue;
            }
            for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let theta_prime: Vec<f64> = dgp
                    .theta0
                    .iter()
                    .zip(&theta)
                    .map(|(t0, t)| (1.0 - lambda) * t0 + lambda * t)
                    .collect();
                let report = rank_condition_s2(instrument, dgp, &theta, &theta_prime)
                    .map_err(|e| CheckError::NonFiniteLoss(e.to_string()))?;
                if !report.full_rank {
                    rank_premise = false;
                    break 'outer;
                }
            }
        }
    }
    let s2 = if !rank_premise {
        ArrowOutcome::NotApplicable("premise fails: E[A·D] rank-deficient on the segment".into())
    } else if unconditional_verdict.status == Status::StrictlyConsistent {
        ArrowOutcome::Confirmed
    } else {
        ArrowOutcome::CounterexampleFound(format!(
            "full-rank instrument but unconditional verdict is {}",
            unconditional_verdict.status.as_str()
        ))
    };

    let rank_as = class.members.iter().all(|dgp| rank_as_condition_s3(instrument, dgp));
    let s3 = if !(rank_as && unconditional_verdict.status == Status::StrictlyConsistent) {
        ArrowOutcome::NotApplicable(
            "premise fails: needs a.s. full-rank A(·,θ₀) and strict unconditional ψ_A".into(),
        )
    } else if conditional_verdict.status == Status::StrictlyConsistent {
        ArrowOutcome::Confirmed
    } else {
        ArrowOutcome::CounterexampleFound(format!(
            "ψ_A strict unconditional with a.s. full-rank A but conditional verdict is {}",
            conditional_verdict.status.as_str()
        ))
    };

    Ok(PropositionsReport {
        family_verdict,
        conditional_verdict,
        unconditional_verdict,
        s1_forward,
        s1_reverse,
        s2,
        s3,
    })
}

/// Definition-S2(i) / Eq.-(S2) audit with covariate-averaged moments. Exact
/// zeros only: indicator bracketing does not average across atoms, so
/// composed quantile-type moments are audited conditionally instead.
pub fn check_unconditional_identification(
    psi: &ModelIdentification,
    class: &DGPClass,
    theta_grid: &GridSpec,
    tol: f64,
) -> Result<Verdict, CheckError> {
    let ball = EXCLUSION_BALL_FACTOR * theta_grid.max_mesh();
    let descriptor = GridDescriptor::new(theta_grid, tol);
    let mut not_strict: Option<Witness> = None;

    for (member, dgp) in class.members.iter().enumerate() {
        let at_theta0 = unconditional_moment(psi, dgp, &dgp.theta0)?;
        let norm0 = at_theta0.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        if norm0 > tol {
            return Ok(Verdict {
                status: Status::Inconsistent,
                witness: Some(Witness { member, point: dgp.theta0.clone(), gap: norm0, atom: None }),
                grid: descriptor,
            });
        }
        for theta in theta_grid.nodes() {
            if inf_norm_dist(&theta, &dgp.theta0) <= ball {
                continue;
            }
            let m = unconditional_moment(psi, dgp, &theta)?;
            let norm = m.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            if not_strict.is_none() && norm <= tol {
                not_strict = Some(Witness { member, point: theta, gap: norm, atom: None });
            }
        }
    }
    Ok(match not_strict {
        Some(w) => Verdict { status: Status::ConsistentNotStrict, witness: Some(w), grid: descriptor },
        None => Verdict::strict(descriptor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{ConditionalDGP, ModelFamily, ParametricModel};
    use crate::dist::{generate_family, DiscreteDistribution, FamilySpec};
    use crate::grid::BoxBounds;
    use crate::identification::InstrumentMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parse(key: &str) -> Loss {
        Loss::parse_key(key).unwrap()
    }

    fn two_point_family(count: usize, seed: u64) -> Vec<DiscreteDistribution> {
        let spec = FamilySpec { count, atoms_min: 2, atoms_max: 2, ..FamilySpec::default() };
        generate_family(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn xi_grid() -> GridSpec {
        GridSpec::new_1d(-3.0, 3.0, 601)
    }

    #[test]
    fn squared_loss_strictly_consistent_for_mean() {
        let family = two_point_family(50, 1);
        let v = check_consistency(
            &parse("bregman:square"),
            &Functional::Mean,
            &family,
            &xi_grid(),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(v.status, Status::StrictlyConsistent);
        assert!(v.witness.is_none());
    }

    #[test]
    fn pinball_inconsistent_for_mean_with_median_witness() {
        // uniform{0,1,5}: mean 2, median 1
        let family = vec![DiscreteDistribution::new(&[0.0, 1.0, 5.0], &[1.0, 1.0, 1.0]).unwrap()];
        let grid = GridSpec::new_1d(-1.0, 6.0, 701);
        let v = check_consistency(
            &parse("gpl:identity:alpha=0.5"),
            &Functional::Mean,
            &family,
            &grid,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(v.status, Status::Inconsistent);
        let w = v.witness.unwrap();
        assert!((w.point[0] - 1.0).abs() < grid.max_mesh() + 1e-12, "witness {:?}", w.point);
        assert!((w.gap - 1.0 / 6.0).abs() < 0.01, "gap {}", w.gap);
    }

    #[test]
    fn step_gpl_consistent_not_strict_for_quantile() {
        let family = generate_family(
            &FamilySpec::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let v = check_consistency(
            &parse("gpl:step:alpha=0.5"),
            &Functional::quantile(0.5).unwrap(),
            &family,
            &xi_grid(),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(v.status, Status::ConsistentNotStrict);
        let w = v.witness.unwrap();
        assert!(w.gap.abs() <= DEFAULT_TOL);
    }

    #[test]
    fn piecewise_linear_bregman_not_strict_for_mean() {
        let family = generate_family(
            &FamilySpec::default(),
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let v = check_consistency(
            &parse("bregman:pwl"),
            &Functional::Mean,
            &family,
            &xi_grid(),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(v.status, Status::ConsistentNotStrict);
    }

    #[test]
    fn witness_gap_reproduces() {
        let family = vec![DiscreteDistribution::new(&[0.0, 1.0, 5.0], &[1.0, 1.0, 1.0]).unwrap()];
        let grid = GridSpec::new_1d(-1.0, 6.0, 701);
        let loss = parse("gpl:identity:alpha=0.5");
        let v = check_consistency(&loss, &Functional::Mean, &family, &grid, DEFAULT_TOL).unwrap();
        let w = v.witness.unwrap();
        let dist = &family[w.member];
        let truth = Functional::Mean.evaluate(dist);
        let e_truth = expected_loss(dist, &loss, &truth).unwrap().unwrap();
        let e_xi = expected_loss(dist, &loss, &ActionPoint::new(w.point.clone()))
            .unwrap()
            .unwrap();
        assert!(((e_truth - e_xi) - w.gap).abs() < 1e-12);
    }

    fn mean_dgp(theta0: f64, atoms: &[f64]) -> ConditionalDGP {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
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
            &GridSpec::new_1d(-4.0, 4.0, 81),
        )
        .unwrap()
    }

    fn theta_grid() -> GridSpec {
        GridSpec::new_1d(-4.0, 4.0, 81)
    }

    #[test]
    fn squared_loss_conditionally_strict_on_mean_dgp() {
        let dgp = mean_dgp(1.5, &[-1.0, 1.0]);
        let v = check_conditional_mc(&parse("bregman:square"), &dgp, &theta_grid(), DEFAULT_TOL)
            .unwrap();
        assert_eq!(v.status, Status::StrictlyConsistent);
    }

    #[test]
    fn pinball_fails_conditionally_on_skewed_mean_dgp() {
        // conditional laws with median below the mean
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let skew = DiscreteDistribution::new(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let skew2 = DiscreteDistribution::new(&[-2.0, 4.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0], vec![2.0]],
            vec![0.5, 0.5],
            vec![skew, skew2],
            model,
            Functional::Mean,
            vec![0.0],
            &theta_grid(),
        )
        .unwrap();
        let v = check_conditional_mc(&parse("gpl:identity:alpha=0.5"), &dgp, &theta_grid(), DEFAULT_TOL)
            .unwrap();
        assert_eq!(v.status, Status::Inconsistent);
        assert!(v.witness.unwrap().atom.is_some());
    }

    #[test]
    fn single_atom_conditional_matches_family_verdict() {
        // one covariate atom at x = 1: theta-grid and xi-grid coincide
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-3.0], vec![3.0]),
        )
        .unwrap();
        let cond = DiscreteDistribution::new(&[-1.0, 0.4, 1.2], &[0.3, 0.4, 0.3]).unwrap();
        let theta0 = cond.mean();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![cond.clone()],
            model,
            Functional::Mean,
            vec![theta0],
            &GridSpec::new_1d(-3.0, 3.0, 61),
        )
        .unwrap();
        let grid = GridSpec::new_1d(-3.0, 3.0, 61);
        for key in ["bregman:square", "gpl:identity:alpha=0.5", "bregman:pwl"] {
            let loss = parse(key);
            let conditional =
                check_conditional_mc(&loss, &dgp, &grid, DEFAULT_TOL).unwrap();
            let family =
                check_consistency(&loss, &Functional::Mean, &[cond.clone()], &grid, DEFAULT_TOL)
                    .unwrap();
            assert_eq!(conditional.status, family.status, "{key}");
        }
    }

    /// The sign-canceling construction: both atoms carry the skewed law
    /// {−1, 2; 2/3, 1/3} (mean 0) on covariates ±1, so pinball gaps at
    /// θ = −1 cancel exactly in the covariate average.
    fn canceling_dgp() -> ConditionalDGP {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let skew = DiscreteDistribution::new(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        ConditionalDGP::new(
            vec![vec![1.0], vec![-1.0]],
            vec![0.5, 0.5],
            vec![skew.clone(), skew],
            model,
            Functional::Mean,
            vec![0.0],
            &theta_grid(),
        )
        .unwrap()
    }

    #[test]
    fn canceling_gaps_hide_conditional_failure_until_closure() {
        let pinball = parse("gpl:identity:alpha=0.5");
        let dgp = canceling_dgp();
        let class = DGPClass::new(vec![dgp.clone()]).unwrap();

        let conditional =
            check_conditional_mc(&pinball, &dgp, &theta_grid(), DEFAULT_TOL).unwrap();
        assert_eq!(conditional.status, Status::Inconsistent);

        // unconditionally the gaps cancel: flat in θ on [−1, 1]
        let unconditional =
            check_unconditional_mc(&pinball, &class, &theta_grid(), DEFAULT_TOL).unwrap();
        assert_eq!(unconditional.status, Status::ConsistentNotStrict);

        // closing the class exposes the violation through a singleton event
        let closed = class.close_under_reweighting();
        let after =
            check_unconditional_mc(&pinball, &closed, &theta_grid(), DEFAULT_TOL).unwrap();
        assert_eq!(after.status, Status::Inconsistent);
    }

    #[test]
    fn counterexample_reweights_to_violating_event() {
        let pinball = parse("gpl:identity:alpha=0.5");
        let dgp = canceling_dgp();
        let ce = construct_counterexample_dgp(&pinball, &dgp, &[-1.0], DEFAULT_TOL).unwrap();
        assert_eq!(ce.event, vec![0]);
        assert!(ce.unconditional_gap <= DEFAULT_TOL);
        assert!((ce.unconditional_gap + 1.0 / 6.0).abs() < 1e-12, "{}", ce.unconditional_gap);

        // A = all atoms when the gap is nonpositive everywhere
        let sq = parse("bregman:square");
        let all = construct_counterexample_dgp(&sq, &dgp, &dgp.theta0.clone(), DEFAULT_TOL).unwrap();
        assert_eq!(all.event, vec![0, 1]);

        // no violating event when every atom strictly prefers theta0
        let err = construct_counterexample_dgp(&sq, &dgp, &[2.0], DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, CheckError::NoViolatingEvent));
    }

    fn audit_grids() -> AuditGrids {
        AuditGrids {
            xi_grid: GridSpec::new_1d(-3.0, 3.0, 301),
            theta_grid: GridSpec::new_1d(-4.0, 4.0, 81),
            tol: DEFAULT_TOL,
            surjectivity_points: 201,
            surjectivity_tol: 0.1,
        }
    }

    #[test]
    fn theorem1_squared_mean_all_arrows_confirmed() {
        let class = DGPClass::new(vec![mean_dgp(1.5, &[-1.0, 1.0]), mean_dgp(-0.5, &[0.5, 1.5])])
            .unwrap()
            .close_under_reweighting();
        let report = theorem1_audit(&parse("bregman:square"), &class, &audit_grids()).unwrap();
        assert_eq!(report.family_verdict.status, Status::StrictlyConsistent);
        assert_eq!(report.conditional_verdict.status, Status::StrictlyConsistent);
        assert_eq!(report.unconditional_verdict.status, Status::StrictlyConsistent);
        for (name, arrow) in report.arrows() {
            assert_eq!(arrow, &ArrowOutcome::Confirmed, "arrow ({name})");
        }
        assert!(!report.any_violation());
    }

    /// Mean-DGP with skewed conditionals (median strictly below the mean).
    fn skewed_mean_dgp(theta0: f64, atoms: &[f64]) -> ConditionalDGP {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let conds: Vec<DiscreteDistribution> = atoms
            .iter()
            .map(|&x| {
                DiscreteDistribution::new(
                    &[theta0 * x - 1.0, theta0 * x + 2.0],
                    &[2.0 / 3.0, 1.0 / 3.0],
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
            &GridSpec::new_1d(-4.0, 4.0, 81),
        )
        .unwrap()
    }

    #[test]
    fn theorem1_pinball_for_mean_premise_fails_without_violation() {
        let class = DGPClass::new(vec![skewed_mean_dgp(1.5, &[0.5, 1.0])])
            .unwrap()
            .close_under_reweighting();
        let report =
            theorem1_audit(&parse("gpl:identity:alpha=0.5"), &class, &audit_grids()).unwrap();
        assert_eq!(report.family_verdict.status, Status::Inconsistent);
        assert!(matches!(report.arrow_i, ArrowOutcome::NotApplicable(_)));
        assert!(!report.any_violation());
    }

    #[test]
    fn theorem1_unclosed_class_leaves_arrow_iv_not_applicable() {
        // unconditionally strict yet conditionally inconsistent: only
        // possible without reweight-closure (the paper's Assumption 3)
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let skew = DiscreteDistribution::new(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let balanced =
            DiscreteDistribution::new(&[-2.0, 0.0, 1.0], &[0.25, 0.25, 0.5]).unwrap();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0], vec![3.0]],
            vec![0.5, 0.5],
            vec![skew, balanced],
            model,
            Functional::Mean,
            vec![0.0],
            &theta_grid(),
        )
        .unwrap();
        let class = DGPClass::new(vec![dgp]).unwrap();
        let pinball = parse("gpl:identity:alpha=0.5");
        let report = theorem1_audit(&pinball, &class, &audit_grids()).unwrap();
        assert_eq!(report.unconditional_verdict.status, Status::StrictlyConsistent);
        assert_eq!(report.conditional_verdict.status, Status::Inconsistent);
        assert!(matches!(report.arrow_iv, ArrowOutcome::NotApplicable(_)));
        assert!(!report.any_violation());

        // with closure the premise itself collapses: no violation either way
        let closed = class.close_under_reweighting();
        let closed_report = theorem1_audit(&pinball, &closed, &audit_grids()).unwrap();
        assert_eq!(closed_report.unconditional_verdict.status, Status::Inconsistent);
        assert!(matches!(closed_report.arrow_iv, ArrowOutcome::NotApplicable(_)));
        assert!(!closed_report.any_violation());
    }

    #[test]
    fn theorem1_constructive_check_fires_on_closed_canceling_class() {
        let class = DGPClass::new(vec![canceling_dgp()]).unwrap().close_under_reweighting();
        let report =
            theorem1_audit(&parse("gpl:identity:alpha=0.5"), &class, &audit_grids()).unwrap();
        let check = report.constructive_check.as_ref().expect("conditional strictness fails");
        assert!(check.passed);
        assert!(check.unconditional_gap <= DEFAULT_TOL);
        assert!(!report.any_violation());
    }

    fn example_s1_class(theta0: f64) -> DGPClass {
        DGPClass::new(vec![mean_dgp(theta0, &[-1.0, 1.0])]).unwrap()
    }

    #[test]
    fn example_s1_identification_verdicts() {
        let class = example_s1_class(1.5);
        let model = class.model().clone();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let raw = ModelIdentification::composition(&phi, &model).unwrap();
        let grid = theta_grid();

        let conditional =
            check_conditional_identification(&raw, &class, &grid, DEFAULT_TOL).unwrap();
        assert_eq!(conditional.status, Status::StrictlyConsistent);

        // E[X] = 0 kills the unconditional moment for every θ
        let unconditional =
            check_unconditional_identification(&raw, &class, &grid, DEFAULT_TOL).unwrap();
        assert_eq!(unconditional.status, Status::ConsistentNotStrict);

        let psi_a = crate::identification::compose_instrument(
            &InstrumentMatrix::covariate(1),
            &phi,
            &model,
        )
        .unwrap();
        let instrumented =
            check_unconditional_identification(&psi_a, &class, &grid, DEFAULT_TOL).unwrap();
        assert_eq!(instrumented.status, Status::StrictlyConsistent);
    }

    #[test]
    fn point_mass_covariate_is_strict_even_without_instrument() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![DiscreteDistribution::new(&[0.5, 2.5], &[0.5, 0.5]).unwrap()],
            model.clone(),
            Functional::Mean,
            vec![1.5],
            &theta_grid(),
        )
        .unwrap();
        let class = DGPClass::new(vec![dgp]).unwrap();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let raw = ModelIdentification::composition(&phi, &model).unwrap();
        let cond =
            check_conditional_identification(&raw, &class, &theta_grid(), DEFAULT_TOL).unwrap();
        let uncond =
            check_unconditional_identification(&raw, &class, &theta_grid(), DEFAULT_TOL).unwrap();
        assert_eq!(cond.status, Status::StrictlyConsistent);
        assert_eq!(uncond.status, Status::StrictlyConsistent);
    }

    #[test]
    fn quantile_identification_brackets_on_crossing_free_class() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let theta0 = 1.0;
        // lower median is exactly x·θ₀ with CDF clear of 0.5 on both sides
        let conds: Vec<DiscreteDistribution> = [1.0f64, 2.0]
            .iter()
            .map(|&x| {
                DiscreteDistribution::new(
                    &[theta0 * x - 1.0, theta0 * x, theta0 * x + 1.0],
                    &[0.3, 0.4, 0.3],
                )
                .unwrap()
            })
            .collect();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0], vec![2.0]],
            vec![0.5, 0.5],
            conds,
            model.clone(),
            Functional::quantile(0.5).unwrap(),
            vec![theta0],
            &theta_grid(),
        )
        .unwrap();
        let class = DGPClass::new(vec![dgp]).unwrap();
        let phi = IdentificationFunction::canonical(&Functional::quantile(0.5).unwrap());
        let raw = ModelIdentification::composition(&phi, &model).unwrap();
        let v = check_conditional_identification(&raw, &class, &theta_grid(), DEFAULT_TOL).unwrap();
        assert_eq!(v.status, Status::StrictlyConsistent);
    }

    #[test]
    fn propositions_audit_confirms_on_example_s1() {
        let class = example_s1_class(1.5);
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let report = propositions_audit(
            &phi,
            &InstrumentMatrix::covariate(1),
            &class,
            &GridSpec::new_1d(-3.0, 3.0, 301),
            &theta_grid(),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(report.family_verdict.status, Status::StrictlyConsistent);
        for (name, arrow) in report.arrows() {
            assert_eq!(arrow, &ArrowOutcome::Confirmed, "{name}");
        }

        // the all-ones instrument kills the rank premise when E[X] = 0
        let ones = propositions_audit(
            &phi,
            &InstrumentMatrix::ones(1, 1),
            &class,
            &GridSpec::new_1d(-3.0, 3.0, 301),
            &theta_grid(),
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(matches!(ones.s2, ArrowOutcome::NotApplicable(_)));
        assert!(matches!(ones.s3, ArrowOutcome::NotApplicable(_)));
        assert!(!ones.any_violation());
    }

    /// Definition-S1 certificates for the whole canonical catalog: expected
    /// identification functions vanish at the functional value (bracketing
    /// for the indicator components) and nowhere off-ball.
    #[test]
    fn canonical_identification_strict_on_random_families() {
        let family = generate_family(
            &FamilySpec { count: 50, ..FamilySpec::default() },
            &mut ChaCha8Rng::seed_from_u64(14),
        );
        let cases = [
            (Functional::Mean, GridSpec::new_1d(-3.0, 3.0, 601)),
            (Functional::quantile(0.5).unwrap(), GridSpec::new_1d(-3.0, 3.0, 601)),
            (Functional::expectile(0.7).unwrap(), GridSpec::new_1d(-3.0, 3.0, 601)),
            (
                Functional::var_es(0.25).unwrap(),
                GridSpec::new(vec![-3.0, -3.0], vec![3.0, 3.0], 41),
            ),
        ];
        for (functional, grid) in cases {
            let phi = IdentificationFunction::canonical(&functional);
            let v = check_identification_on_family(&phi, &functional, &family, &grid, 1e-10)
                .unwrap();
            assert_eq!(v.status, Status::StrictlyConsistent, "{functional:?}");
        }
    }

    #[test]
    fn nonsingular_transform_stays_strict_on_random_family() {
        use nalgebra::DMatrix;
        let family = generate_family(
            &FamilySpec { count: 50, ..FamilySpec::default() },
            &mut ChaCha8Rng::seed_from_u64(15),
        );
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let transformed =
            phi.transform(|xi| DMatrix::from_element(1, 1, xi[0] * xi[0] + 1.0), "quad");
        let grid = GridSpec::new_1d(-3.0, 3.0, 601);
        transformed.audit_transform_nonsingular(&grid).unwrap();
        let v =
            check_identification_on_family(&transformed, &Functional::Mean, &family, &grid, 1e-10)
                .unwrap();
        assert_eq!(v.status, Status::StrictlyConsistent);
    }

    /// Instrument-transform equivalence at the verdict level: auditing
    /// (A, φ) and (A/h∘m, h·φ) gives identical verdicts.
    #[test]
    fn instrument_transform_equivalent_verdicts() {
        use nalgebra::DMatrix;
        let class = example_s1_class(1.5);
        let model = class.model().clone();
        let phi = IdentificationFunction::canonical(&Functional::Mean);
        let h = |xi: &[f64]| xi[0] * xi[0] + 1.0;
        let phi_prime = phi.transform(move |xi| DMatrix::from_element(1, 1, h(xi)), "h");
        let a = InstrumentMatrix::covariate(1);
        let model_c = model.clone();
        let a_prime = crate::identification::InstrumentMatrix::custom(
            1,
            1,
            "covariate/h",
            move |x, theta| {
                let m = model_c.eval(x, theta);
                DMatrix::from_element(1, 1, x[0] / (m[0] * m[0] + 1.0))
            },
        );
        let psi = crate::identification::compose_instrument(&a, &phi, &model).unwrap();
        let psi_prime =
            crate::identification::compose_instrument(&a_prime, &phi_prime, &model).unwrap();
        let grid = theta_grid();
        for (lhs, rhs) in [
            (
                check_unconditional_identification(&psi, &class, &grid, DEFAULT_TOL).unwrap(),
                check_unconditional_identification(&psi_prime, &class, &grid, DEFAULT_TOL).unwrap(),
            ),
            (
                check_conditional_identification(&psi, &class, &grid, DEFAULT_TOL).unwrap(),
                check_conditional_identification(&psi_prime, &class, &grid, DEFAULT_TOL).unwrap(),
            ),
        ] {
            assert_eq!(lhs.status, rhs.status);
        }
    }

    #[test]
    fn single_atom_class_unconditional_equals_conditional() {
        let model = ParametricModel::new(
            ModelFamily::Linear,
            1,
            BoxBounds::new(vec![-4.0], vec![4.0]),
        )
        .unwrap();
        let cond = DiscreteDistribution::new(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let dgp = ConditionalDGP::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![cond],
            model,
            Functional::Mean,
            vec![0.0],
            &theta_grid(),
        )
        .unwrap();
        let class = DGPClass::new(vec![dgp.clone()]).unwrap();
        for key in ["bregman:square", "gpl:identity:alpha=0.5", "bregman:pwl"] {
            let loss = parse(key);
            let conditional =
                check_conditional_mc(&loss, &dgp, &theta_grid(), DEFAULT_TOL).unwrap();
            let unconditional =
                check_unconditional_mc(&loss, &class, &theta_grid(), DEFAULT_TOL).unwrap();
            assert_eq!(conditional.status, unconditional.status, "{key}");
        }
    }

    #[test]
    fn shrinking_the_family_never_worsens_the_verdict() {
        let family = generate_family(
            &FamilySpec { count: 20, ..FamilySpec::default() },
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        for key in ["bregman:square", "gpl:identity:alpha=0.1", "bregman:pwl", "expectile:tau=0.7"] {
            let loss = parse(key);
            let functional = match key {
                "gpl:identity:alpha=0.1" => Functional::quantile(0.1).unwrap(),
                "expectile:tau=0.7" => Functional::expectile(0.7).unwrap(),
                _ => Functional::Mean,
            };
            let full = check_consistency(&loss, &functional, &family, &xi_grid(), DEFAULT_TOL)
                .unwrap();
            let half = check_consistency(
                &loss,
                &functional,
                &family[..10],
                &xi_grid(),
                DEFAULT_TOL,
            )
            .unwrap();
            assert!(half.status <= full.status, "{key}");
        }
    }
}
