//! M-estimation (empirical loss minimization) and Z-estimation (squared
//! norm of averaged moment conditions) over sampled datasets, on top of a
//! deterministic multistart Nelder–Mead simplex search, plus a seeded Monte
//! Carlo consistency harness.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dgp::{ConditionalDGP, Dataset, ParametricModel};
use crate::dist::ActionPoint;
use crate::grid::{inf_norm_dist, BoxBounds};
use crate::identification::ModelIdentification;
use crate::losses::Loss;

/// Total multistart cap: 5 nodes per dimension up to 5⁴ lattice starts.
pub const MAX_STARTS: usize = 625;

#[derive(Debug, Error)]
pub enum EstimError {
    #[error("objective is non-finite at every start")]
    AllStartsNonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
}

/// Search box, multistart density and stopping rules for the derivative-free
/// minimizer. Runs are deterministic given the config (the seed only jitters
/// multistart points).
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub theta_box: BoxBounds,
    pub nodes_per_dim: usize,
    pub max_iters: usize,
    pub objective_tol: f64,
    pub simplex_tol: f64,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn new(theta_box: BoxBounds) -> Self {
        Self {
            theta_box,
            nodes_per_dim: 5,
            max_iters: 500,
            objective_tol: 1e-10,
            simplex_tol: 1e-8,
            seed: 0,
        }
    }
}

/// A located minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub starts: usize,
    pub converged: bool,
    /// The final objective values of all starts span less than 1e-10:
    /// the problem looks flat and argmin ties were broken by start order.
    pub near_flat: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// One Nelder–Mead descent from `start`, projected into the box.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    objective: &F,
    start: &[f64],
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64, bool) {
    let q = start.len();
    let clamp = |mut p: Vec<f64>| {
        cfg.theta_box.clamp(&mut p);
        p
    };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(q + 1);
    let base = clamp(start.to_vec());
    simplex.push((sanitize(objective(&base)), base.clone()));
    for d in 0..q {
        let width = cfg.theta_box.hi[d] - cfg.theta_box.lo[d];
        let mut h = (0.05 * width).max(1e-4);
        if base[d] + h > cfg.theta_box.hi[d] {
            h = -h;
        }
        let mut v = base.clone();
        v[d] += h;
        let v = clamp(v);
        simplex.push((sanitize(objective(&v)), v));
    }

    let mut converged = false;
    for _ in 0..cfg.max_iters {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[q].0 - simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(_, v)| inf_norm_dist(v, &simplex[0].1))
            .fold(0.0, f64::max);
        if spread.abs() <= cfg.objective_tol && diameter <= cfg.simplex_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..q)
            .map(|d| simplex[..q].iter().map(|(_, v)| v[d]).sum::<f64>() / q as f64)
            .collect();
        let worst = simplex[q].clone();
        let reflected = clamp(
            centroid.iter().zip(&worst.1).map(|(c, w)| c + (c - w)).collect(),
        );
        let fr = sanitize(objective(&reflected));

        if fr < simplex[0].0 {
            let expanded = clamp(
                centroid.iter().zip(&worst.1).map(|(c, w)| c + 2.0 * (c - w)).collect(),
            );
            let fe = sanitize(objective(&expanded));
            simplex[q] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
        } else if fr < simplex[q - 1].0 {
            simplex[q] = (fr, reflected);
        } else {
            let (contracted, fc) = if fr < worst.0 {
                let p = clamp(
                    centroid.iter().zip(&reflected).map(|(c, r)| c + 0.5 * (r - c)).collect(),
                );
                let f = sanitize(objective(&p));
                (p, f)
            } else {
                let p = clamp(
                    centroid.iter().zip(&worst.1).map(|(c, w)| c - 0.5 * (c - w)).collect(),
                );
                let f = sanitize(objective(&p));
                (p, f)
            };
            if fc < worst.0.min(fr) {
                simplex[q] = (fc, contracted);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&entry.1)
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    let v = clamp(v);
                    *entry = (sanitize(objective(&v)), v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (f, v) = simplex.swap_remove(0);
    (v, f, converged)
}

/// Deterministic multistart minimization over the box: every lattice node
/// (capped at [`MAX_STARTS`]) plus one seeded jittered copy of each, then a
/// Nelder–Mead descent from each start.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    objective: F,
    cfg: &OptimizerConfig,
) -> Result<EstimateResult, EstimError> {
    let q = cfg.theta_box.dim();
    let mut nodes = cfg.nodes_per_dim.max(2);
    while nodes.pow(q as u32) > MAX_STARTS && nodes > 2 {
        nodes -= 1;
    }
    let lattice = cfg.theta_box.grid(nodes);
    let mesh = lattice.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(2 * lattice.len());
    for node in lattice.nodes() {
        starts.push(node);
    }
    for node in lattice.nodes() {
        let mut jittered: Vec<f64> = node
            .iter()
            .enumerate()
            .map(|(d, x)| x + mesh[d] * 0.25 * (rng.random::<f64>() - 0.5))
            .collect();
        cfg.theta_box.clamp(&mut jittered);
        starts.push(jittered);
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut finite_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut finals: Vec<Vec<f64>> = Vec::with_capacity(starts.len());
    for start in &starts {
        let (theta, f, converged) = nelder_mead(&objective, start, cfg);
        if f.is_finite() {
            finite_range = (finite_range.0.min(f), finite_range.1.max(f));
            finals.push(theta.clone());
        }
        match &best {
            Some((_, fb, _)) if f >= *fb => {}
            _ => best = Some((theta, f, converged)),
        }
    }
    let (theta, objective_value, converged) = best.expect("at least one start");
    if !objective_value.is_finite() {
        return Err(EstimError::AllStartsNonFinite);
    }
    // flat objective: indistinguishable minima scattered across the box, so
    // the returned argmin is a tie broken by start order
    let theta_spread = finals
        .iter()
        .map(|t| inf_norm_dist(t, &theta))
        .fold(0.0, f64::max);
    let near_flat = finite_range.1 - finite_range.0 < 1e-10
        && theta_spread > 0.5 * mesh.iter().copied().fold(0.0, f64::max);
    Ok(EstimateResult {
        theta,
        objective: objective_value,
        starts: starts.len(),
        converged,
        near_flat,
    })
}

/// Empirical M-estimation: θ̂ = argmin (1/T) Σ ρ(Yₜ, m(Xₜ, θ)). Parameters
/// whose model output leaves the loss domain score +∞ and are never chosen.
///
/// κ(y) contributes a θ-free constant, so the search runs on the κ-stripped
/// core and the constant is added back to the reported objective: θ̂ is
/// exactly invariant under κ-shifts.
pub fn m_estimate(
    loss: &Loss,
    model: &ParametricModel,
    data: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<EstimateResult, EstimError> {
    if cfg.theta_box.dim() != model.param_dim() {
        return Err(EstimError::DimensionMismatch(format!(
            "box has dimension {}, model has q={}",
            cfg.theta_box.dim(),
            model.param_dim()
        )));
    }
    if loss.action_dim() != model.output_dim() {
        return Err(EstimError::DimensionMismatch(format!(
            "loss expects k={}, model outputs k={}",
            loss.action_dim(),
            model.output_dim()
        )));
    }
    let kappa_mean = match loss.kappa() {
        Some(kappa) => {
            data.ys.iter().map(|&y| kappa.eval(y)).sum::<f64>() / data.len() as f64
        }
        None => 0.0,
    };
    if !kappa_mean.is_finite() {
        return Err(EstimError::AllStartsNonFinite);
    }
    let core = loss.with_kappa(crate::losses::Kappa::Zero);
    let objective = |theta: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (y, x) in data.rows() {
            let xi = ActionPoint::new(model.eval(x, theta));
            match core.evaluate(y, &xi) {
                Ok(v) if v.is_finite() => acc += v,
                _ => return f64::INFINITY,
            }
        }
        acc / data.len() as f64
    };
    let mut result = minimize(objective, cfg)?;
    result.objective += kappa_mean;
    Ok(result)
}

/// Z-estimation: θ̂ = argmin ‖(1/T) Σ ψ(Yₜ, Xₜ, θ)‖². Exact identification
/// only: the moment dimension must equal the parameter dimension.
pub fn z_estimate(
    psi: &ModelIdentification,
    data: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<EstimateResult, EstimError> {
    if psi.dim != cfg.theta_box.dim() {
        return Err(EstimError::DimensionMismatch(format!(
            "psi provides {} moments, box has q={} (exactly identified case only)",
            psi.dim,
            cfg.theta_box.dim()
        )));
    }
    let objective = |theta: &[f64]| -> f64 {
        let mut acc = vec![0.0; psi.dim];
        for (y, x) in data.rows() {
            let v = psi.evaluate(y, x, theta);
            for (a, c) in acc.iter_mut().zip(v) {
                if !c.is_finite() {
                    return f64::INFINITY;
                }
                *a += c;
            }
        }
        acc.iter().map(|a| (a / data.len() as f64).powi(2)).sum()
    };
    minimize(objective, cfg)
}

/// Which estimator a Monte Carlo run drives.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    M(Loss),
    Z(ModelIdentification),
}

/// One replication's estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub sample_size: usize,
    pub replication: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub objective: f64,
}

/// Per-(T, coordinate) aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub sample_size: usize,
    pub coord: usize,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub base_seed: u64,
    pub theta0: Vec<f64>,
    pub rows: Vec<McRow>,
    pub summary: Vec<McSummary>,
}

impl MonteCarloReport {
    pub fn rmse(&self, sample_size: usize, coord: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.sample_size == sample_size && s.coord == coord)
            .map(|s| s.rmse)
    }
}

/// Runs `replications` estimation replications at each sample size, with
/// replication r drawing its dataset from seed `base_seed + r`; aggregation
/// is a deterministic fold ordered by (T, r).
pub fn monte_carlo(
    dgp: &ConditionalDGP,
    spec: &EstimatorSpec,
    t_list: &[usize],
    replications: usize,
    base_seed: u64,
    cfg: &OptimizerConfig,
) -> Result<MonteCarloReport, EstimError> {
    if replications < 2 {
        return Err(EstimError::InvalidConfig("need at least 2 replications".into()));
    }
    if t_list.is_empty() {
        return Err(EstimError::InvalidConfig("empty sample size list".into()));
    }
    let q = dgp.theta0.len();
    let mut rows = Vec::with_capacity(t_list.len() * replications);
    let mut summary = Vec::with_capacity(t_list.len() * q);
    for &t in t_list {
        let mut errors = vec![Vec::with_capacity(replications); q];
        for r in 0..replications {
            let seed = base_seed + r as u64;
            let data = dgp.sample(t, seed);
            let est = match spec {
                EstimatorSpec::M(loss) => m_estimate(loss, &dgp.model, &data, cfg)?,
                EstimatorSpec::Z(psi) => z_estimate(psi, &data, cfg)?,
            };
            for (coord, errs) in errors.iter_mut().enumerate() {
                errs.push(est.theta[coord] - dgp.theta0[coord]);
            }
            rows.push(McRow {
                sample_size: t,
                replication: r,
                seed,
                theta: est.theta,
                objective: est.objective,
            });
        }
        for (coord, errs) in errors.iter().enumerate() {
            let n = errs.len() as f64;
            let bias = errs.iter().sum::<f64>() / n;
            let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
            summary.push(McSummary { sample_size: t, coord, bias, rmse });
        }
    }
    Ok(MonteCarloReport { base_seed, theta0: dgp.theta0.clone(), rows, summary })
}
