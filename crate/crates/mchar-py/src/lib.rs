//! Python bindings: discrete distributions, loss evaluation by key,
//! consistency certification and the two estimators on in-memory data.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mchar::checkers::{check_consistency, Status};
use mchar::dgp::{Dataset, ModelFamily, ParametricModel};
use mchar::dist::{ActionPoint, DiscreteDistribution, Functional};
use mchar::estimators::{m_estimate, z_estimate, OptimizerConfig};
use mchar::grid::{BoxBounds, GridSpec};
use mchar::identification::{compose_instrument, IdentificationFunction, InstrumentMatrix};
use mchar::losses::Loss;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A finite-support distribution on the real line.
#[pyclass(frozen, name = "Distribution")]
struct PyDistribution {
    inner: DiscreteDistribution,
}

#[pymethods]
impl PyDistribution {
    #[new]
    fn new(support: Vec<f64>, probs: Vec<f64>) -> PyResult<Self> {
        DiscreteDistribution::new(&support, &probs)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn support(&self) -> Vec<f64> {
        self.inner.support().to_vec()
    }

    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn lower_quantile(&self, alpha: f64) -> f64 {
        self.inner.lower_quantile(alpha)
    }

    fn expectile(&self, tau: f64) -> f64 {
        self.inner.expectile(tau)
    }

    fn expected_shortfall(&self, alpha: f64) -> f64 {
        self.inner.expected_shortfall(alpha)
    }

    /// Evaluates a functional by key (`mean`, `quantile:alpha=0.5`,
    /// `expectile:tau=0.7`, `vares:alpha=0.25`).
    fn functional(&self, key: &str) -> PyResult<Vec<f64>> {
        let f = Functional::parse_key(key).map_err(value_err)?;
        Ok(f.evaluate(&self.inner).coords)
    }

    fn __repr__(&self) -> String {
        format!(
            "Distribution(support={:?}, probs={:?})",
            self.inner.support(),
            self.inner.probs()
        )
    }
}

/// Evaluates a loss by key, e.g. `bregman:square`, `gpl:identity:alpha=0.9`,
/// `expectile:tau=0.7`, `varvs:alpha=0.25`.
#[pyfunction]
fn loss_eval(key: &str, y: f64, xi: Vec<f64>) -> PyResult<f64> {
    let loss = Loss::parse_key(key).map_err(value_err)?;
    loss.evaluate(y, &ActionPoint::new(xi)).map_err(value_err)
}

/// Gradient of the loss in its action argument, off kinks.
#[pyfunction]
fn loss_subgradient(key: &str, y: f64, xi: Vec<f64>) -> PyResult<Vec<f64>> {
    let loss = Loss::parse_key(key).map_err(value_err)?;
    loss.subgradient(y, &ActionPoint::new(xi)).map_err(value_err)
}

/// Certifies (strict) consistency of a loss for a functional on a family of
/// distributions over a 1-D or square 2-D action grid. Returns
/// (status, witness) where witness is None or (member, point, gap).
#[pyfunction]
#[pyo3(signature = (loss, functional, family, xi_lo=-3.0, xi_hi=3.0, points=601, tol=1e-9))]
#[allow(clippy::too_many_arguments)]
fn certify_consistency(
    loss: &str,
    functional: &str,
    family: Vec<PyRef<PyDistribution>>,
    xi_lo: f64,
    xi_hi: f64,
    points: usize,
    tol: f64,
) -> PyResult<(String, Option<(usize, Vec<f64>, f64)>)> {
    let loss = Loss::parse_key(loss).map_err(value_err)?;
    let functional = Functional::parse_key(functional).map_err(value_err)?;
    if loss.action_dim() != functional.output_dim() {
        return Err(PyValueError::new_err("loss and functional dimensions differ"));
    }
    let dists: Vec<DiscreteDistribution> = family.iter().map(|d| d.inner.clone()).collect();
    let grid = GridSpec::new(
        vec![xi_lo; functional.output_dim()],
        vec![xi_hi; functional.output_dim()],
        points,
    );
    let verdict = check_consistency(&loss, &functional, &dists, &grid, tol).map_err(value_err)?;
    let status = match verdict.status {
        Status::StrictlyConsistent => "strictly-consistent",
        Status::ConsistentNotStrict => "consistent-not-strict",
        Status::Inconsistent => "inconsistent",
    };
    Ok((
        status.to_string(),
        verdict.witness.map(|w| (w.member, w.point, w.gap)),
    ))
}

fn linear_setup(
    ys: &[f64],
    xs: &[Vec<f64>],
    theta_lo: Vec<f64>,
    theta_hi: Vec<f64>,
    seed: u64,
) -> PyResult<(ParametricModel, Dataset, OptimizerConfig)> {
    if ys.is_empty() || ys.len() != xs.len() {
        return Err(PyValueError::new_err("ys and xs must have equal positive length"));
    }
    let p = xs[0].len();
    if xs.iter().any(|x| x.len() != p) || theta_lo.len() != p || theta_hi.len() != p {
        return Err(PyValueError::new_err("inconsistent covariate/parameter dimensions"));
    }
    let model = ParametricModel::new(ModelFamily::Linear, p, BoxBounds::new(theta_lo, theta_hi))
        .map_err(value_err)?;
    let data = Dataset { ys: ys.to_vec(), xs: xs.to_vec(), seed };
    let cfg = OptimizerConfig { seed, ..OptimizerConfig::new(model.theta_box.clone()) };
    Ok((model, data, cfg))
}

/// M-estimation of a linear model m(x, θ) = xᵀθ under a loss key.
/// Returns (theta_hat, objective).
#[pyfunction]
#[pyo3(signature = (loss, ys, xs, theta_lo, theta_hi, seed=0))]
fn m_estimate_linear(
    loss: &str,
    ys: Vec<f64>,
    xs: Vec<Vec<f64>>,
    theta_lo: Vec<f64>,
    theta_hi: Vec<f64>,
    seed: u64,
) -> PyResult<(Vec<f64>, f64)> {
    let loss = Loss::parse_key(loss).map_err(value_err)?;
    let (model, data, cfg) = linear_setup(&ys, &xs, theta_lo, theta_hi, seed)?;
    let result = m_estimate(&loss, &model, &data, &cfg).map_err(value_err)?;
    Ok((result.theta, result.objective))
}

/// Z-estimation of a linear mean model with the covariate instrument:
/// ψ(y, x, θ) = x(xᵀθ − y). Returns (theta_hat, objective).
#[pyfunction]
#[pyo3(signature = (ys, xs, theta_lo, theta_hi, seed=0))]
fn z_estimate_linear(
    ys: Vec<f64>,
    xs: Vec<Vec<f64>>,
    theta_lo: Vec<f64>,
    theta_hi: Vec<f64>,
    seed: u64,
) -> PyResult<(Vec<f64>, f64)> {
    let (model, data, cfg) = linear_setup(&ys, &xs, theta_lo, theta_hi, seed)?;
    let phi = IdentificationFunction::canonical(&Functional::Mean);
    let psi = compose_instrument(&InstrumentMatrix::covariate(model.covariate_dim), &phi, &model)
        .map_err(value_err)?;
    let result = z_estimate(&psi, &data, &cfg).map_err(value_err)?;
    Ok((result.theta, result.objective))
}

#[pymodule]
fn mchar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_function(wrap_pyfunction!(loss_eval, m)?)?;
    m.add_function(wrap_pyfunction!(loss_subgradient, m)?)?;
    m.add_function(wrap_pyfunction!(certify_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(m_estimate_linear, m)?)?;
    m.add_function(wrap_pyfunction!(z_estimate_linear, m)?)?;
    Ok(())
}
