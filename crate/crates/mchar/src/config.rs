//! Declarative experiment configs: a single TOML file naming distributions,
//! random families, DGPs, classes, checks and estimation runs, resolved and
//! validated before any computation starts.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::checkers::Status;
use crate::dgp::{ConditionalDGP, DGPClass, ParametricModel};
use crate::dist::{generate_family, DiscreteDistribution, FamilySpec, Functional};
use crate::grid::{BoxBounds, GridSpec};
use crate::identification::InstrumentMatrix;
use crate::losses::Loss;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub tol: f64,
    pub xi_mesh: f64,
    pub xi_lo: f64,
    pub xi_hi: f64,
    /// Nodes per axis of the 2-D (VaR, ES) action grid.
    pub xi_points_2d: usize,
    pub theta_points: usize,
    /// Nodes per axis of θ-grids once q ≥ 3 (lattice sizes explode otherwise).
    pub theta_points_highdim: usize,
    pub seed: u64,
    pub surjectivity_points: usize,
    pub surjectivity_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            xi_mesh: 1e-3,
            xi_lo: -3.0,
            xi_hi: 3.0,
            xi_points_2d: 61,
            theta_points: 41,
            theta_points_highdim: 7,
            seed: 0,
            surjectivity_points: 201,
            surjectivity_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDecl {
    pub name: String,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_atoms_min")]
    pub atoms_min: usize,
    #[serde(default = "default_atoms_max")]
    pub atoms_max: usize,
    #[serde(default = "default_support_lo")]
    pub support_lo: f64,
    #[serde(default = "default_support_hi")]
    pub support_hi: f64,
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    #[serde(default = "default_avoid_alphas")]
    pub avoid_alphas: Vec<f64>,
    #[serde(default = "default_cdf_margin")]
    pub cdf_margin: f64,
    pub seed: Option<u64>,
}

fn default_count() -> usize {
    50
}
fn default_atoms_min() -> usize {
    3
}
fn default_atoms_max() -> usize {
    6
}
fn default_support_lo() -> f64 {
    -2.0
}
fn default_support_hi() -> f64 {
    2.0
}
fn default_min_gap() -> f64 {
    0.05
}
fn default_avoid_alphas() -> Vec<f64> {
    vec![0.1, 0.5, 0.9]
}
fn default_cdf_margin() -> f64 {
    0.02
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionDecl {
    pub name: String,
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalDecl {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpDecl {
    pub name: String,
    pub functional: String,
    pub model: String,
    pub theta0: Vec<f64>,
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    pub covariate_probs: Vec<f64>,
    pub conditionals: Vec<ConditionalDecl>,
    /// Overrides `settings.theta_points` for the validation grid.
    pub theta_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDecl {
    pub name: String,
    pub members: Vec<String>,
    #[serde(default)]
    pub close_under_reweighting: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyCheckDecl {
    pub loss: String,
    pub functional: String,
    pub family: String,
    /// `strictly-consistent`, `consistent-not-strict` or `inconsistent`.
    pub expect: Option<String>,
    pub xi_lo: Option<f64>,
    pub xi_hi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConsistencyCheckDecl {
    pub loss: String,
    pub class: String,
    /// `conditional` or `unconditional`.
    pub mode: String,
    pub expect: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationCheckDecl {
    /// Functional key; the canonical identification function is used.
    pub functional: String,
    /// Instrument key (`ones`, `covariate`, `covariate-affine`); absent
    /// means the raw composition φ(y, m(x,θ)).
    pub instrument: Option<String>,
    pub class: String,
    /// `conditional` or `unconditional`.
    pub mode: String,
    pub expect: Option<String>,
}

/// Cells whose loss/functional dimensions disagree are skipped.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Decl {
    pub losses: Vec<String>,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateDecl {
    pub name: String,
    /// `m` or `z`.
    pub estimator: String,
    pub loss: Option<String>,
    pub instrument: Option<String>,
    pub dgp: String,
    pub sample_size: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloDecl {
    pub name: String,
    pub estimator: String,
    pub loss: Option<String>,
    pub instrument: Option<String>,
    pub dgp: String,
    pub t_list: Vec<usize>,
    pub replications: usize,
    pub seed: Option<u64>,
}

/// The raw deserialized experiment file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub families: Vec<FamilyDecl>,
    #[serde(default)]
    pub distributions: Vec<DistributionDecl>,
    #[serde(default)]
    pub dgps: Vec<DgpDecl>,
    #[serde(default)]
    pub classes: Vec<ClassDecl>,
    #[serde(default)]
    pub consistency_checks: Vec<ConsistencyCheckDecl>,
    #[serde(default)]
    pub model_consistency_checks: Vec<ModelConsistencyCheckDecl>,
    #[serde(default)]
    pub identification_checks: Vec<IdentificationCheckDecl>,
    #[serde(default)]
    pub theorem1: Option<Theorem1Decl>,
    #[serde(default)]
    pub estimates: Vec<EstimateDecl>,
    #[serde(default)]
    pub monte_carlos: Vec<MonteCarloDecl>,
}

/// Config with every key resolved against the module catalogs and every DGP
/// validated; commands consume this.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub settings: Settings,
    pub families: BTreeMap<String, Vec<DiscreteDistribution>>,
    pub dgps: BTreeMap<String, ConditionalDGP>,
    pub classes: BTreeMap<String, DGPClass>,
    pub raw: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn resolve(self, seed_override: Option<u64>) -> Result<ResolvedConfig, ConfigError> {
        let mut settings = self.settings.clone();
        if let Some(seed) = seed_override {
            settings.seed = seed;
        }
        if settings.tol <= 0.0 || settings.xi_mesh <= 0.0 || settings.surjectivity_tol <= 0.0 {
            return Err(invalid("tolerances and meshes must be positive"));
        }
        if settings.theta_points < 2 || settings.surjectivity_points < 2 {
            return Err(invalid("grids need at least two points per dimension"));
        }

        let mut families = BTreeMap::new();
        for f in &self.families {
            if families.contains_key(&f.name) {
                return Err(invalid(format!("duplicate family '{}'", f.name)));
            }
            let spec = FamilySpec {
                count: f.count,
                atoms_min: f.atoms_min,
                atoms_max: f.atoms_max,
                support_lo: f.support_lo,
                support_hi: f.support_hi,
                min_gap: f.min_gap,
                avoid_alphas: f.avoid_alphas.clone(),
                cdf_margin: f.cdf_margin,
            };
            if spec.atoms_min < 1
                || spec.atoms_max < spec.atoms_min
                || spec.support_hi <= spec.support_lo
            {
                return Err(invalid(format!("family '{}' has a bad shape", f.name)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(f.seed.unwrap_or(settings.seed));
            families.insert(f.name.clone(), generate_family(&spec, &mut rng));
        }
        for d in &self.distributions {
            if families.contains_key(&d.name) {
                return Err(invalid(format!("duplicate family/distribution '{}'", d.name)));
            }
            let dist = DiscreteDistribution::new(&d.support, &d.probs)
                .map_err(|e| invalid(format!("distribution '{}': {e}", d.name)))?;
            families.insert(d.name.clone(), vec![dist]);
        }

        let mut dgps = BTreeMap::new();
        for decl in &self.dgps {
            if dgps.contains_key(&decl.name) {
                return Err(invalid(format!("duplicate dgp '{}'", decl.name)));
            }
            let functional = Functional::parse_key(&decl.functional)
                .map_err(|e| invalid(format!("dgp '{}': {e}", decl.name)))?;
            if decl.theta_lo.len() != decl.theta_hi.len() {
                return Err(invalid(format!("dgp '{}': theta box sides differ", decl.name)));
            }
            let theta_box = check_box(&decl.theta_lo, &decl.theta_hi)
                .map_err(|e| invalid(format!("dgp '{}': {e}", decl.name)))?;
            let covariate_dim = decl
                .covariates
                .first()
                .map(|x| x.len())
                .ok_or_else(|| invalid(format!("dgp '{}': no covariate atoms", decl.name)))?;
            let model = ParametricModel::parse_key(&decl.model, covariate_dim, theta_box)
                .map_err(|e| invalid(format!("dgp '{}': {e}", decl.name)))?;
            let conditionals: Vec<DiscreteDistribution> = decl
                .conditionals
                .iter()
                .map(|c| DiscreteDistribution::new(&c.support, &c.probs))
                .collect::<Result<_, _>>()
                .map_err(|e| invalid(format!("dgp '{}': {e}", decl.name)))?;
            let points = decl.theta_points.unwrap_or(if model.param_dim() >= 3 {
                settings.theta_points_highdim
            } else {
                settings.theta_points
            });
            let theta_grid = model.theta_box.grid(points);
            let dgp = ConditionalDGP::new(
                decl.covariates.clone(),
                decl.covariate_probs.clone(),
                conditionals,
                model,
                functional,
                decl.theta0.clone(),
                &theta_grid,
            )
            .map_err(|e| invalid(format!("dgp '{}': {e}", decl.name)))?;
            dgps.insert(decl.name.clone(), dgp);
        }

        let mut classes = BTreeMap::new();
        for decl in &self.classes {
            if classes.contains_key(&decl.name) {
                return Err(invalid(format!("duplicate class '{}'", decl.name)));
            }
            let members: Vec<ConditionalDGP> = decl
                .members
                .iter()
                .map(|m| {
                    dgps.get(m)
                        .cloned()
                        .ok_or_else(|| invalid(format!("class '{}': unknown dgp '{m}'", decl.name)))
                })
                .collect::<Result<_, _>>()?;
            let class = DGPClass::new(members)
                .map_err(|e| invalid(format!("class '{}': {e}", decl.name)))?;
            let class = if decl.close_under_reweighting {
                class.close_under_reweighting()
            } else {
                class
            };
            classes.insert(decl.name.clone(), class);
        }

        // key resolution dry runs: fail before any computation
        for c in &self.consistency_checks {
            Loss::parse_key(&c.loss).map_err(|e| invalid(e.to_string()))?;
            Functional::parse_key(&c.functional).map_err(|e| invalid(e.to_string()))?;
            if !families.contains_key(&c.family) {
                return Err(invalid(format!("unknown family '{}'", c.family)));
            }
            check_expectation_key(c.expect.as_deref())?;
        }
        for c in &self.model_consistency_checks {
            Loss::parse_key(&c.loss).map_err(|e| invalid(e.to_string()))?;
            check_mode(&c.mode)?;
            check_expectation_key(c.expect.as_deref())?;
            if !classes.contains_key(&c.class) {
                return Err(invalid(format!("unknown class '{}'", c.class)));
            }
        }
        for c in &self.identification_checks {
            Functional::parse_key(&c.functional).map_err(|e| invalid(e.to_string()))?;
            check_mode(&c.mode)?;
            check_expectation_key(c.expect.as_deref())?;
            let class = classes
                .get(&c.class)
                .ok_or_else(|| invalid(format!("unknown class '{}'", c.class)))?;
            if let Some(key) = &c.instrument {
                let model = class.model();
                InstrumentMatrix::parse_key(key, model.covariate_dim, model.output_dim())
                    .map_err(|e| invalid(e.to_string()))?;
            }
        }
        if let Some(t) = &self.theorem1 {
            for l in &t.losses {
                Loss::parse_key(l).map_err(|e| invalid(e.to_string()))?;
            }
            for c in &t.classes {
                if !classes.contains_key(c) {
                    return Err(invalid(format!("unknown class '{c}'")));
                }
            }
        }
        for e in self
            .estimates
            .iter()
            .map(|e| (&e.estimator, &e.loss, &e.instrument, &e.dgp, e.sample_size))
            .chain(
                self.monte_carlos
                    .iter()
                    .map(|m| (&m.estimator, &m.loss, &m.instrument, &m.dgp, 1)),
            )
        {
            let (estimator, loss, instrument, dgp, t) = e;
            if !dgps.contains_key(dgp) {
                return Err(invalid(format!("unknown dgp '{dgp}'")));
            }
            match estimator.as_str() {
                "m" => {
                    let key = loss
                        .as_ref()
                        .ok_or_else(|| invalid("m-estimation needs a loss key"))?;
                    Loss::parse_key(key).map_err(|e| invalid(e.to_string()))?;
                }
                "z" => {
                    let model = &dgps[dgp].model;
                    match instrument {
                        Some(key) => {
                            InstrumentMatrix::parse_key(key, model.covariate_dim, model.output_dim())
                                .map_err(|e| invalid(e.to_string()))?;
                        }
                        None => {
                            // exact identification: raw composition only fits q = k
                            if dgps[dgp].functional.output_dim() != model.param_dim() {
                                return Err(invalid(
                                    "un-instrumented z-estimation needs q = k; add an instrument",
                                ));
                            }
                        }
                    }
                }
                other => return Err(invalid(format!("unknown estimator '{other}'"))),
            }
            if t == 0 {
                return Err(invalid("sample size must be positive"));
            }
        }
        for m in &self.monte_carlos {
            if m.t_list.is_empty() {
                return Err(invalid(format!("monte carlo '{}': empty t_list", m.name)));
            }
            if m.replications < 2 {
                return Err(invalid(format!("monte carlo '{}': need >= 2 replications", m.name)));
            }
        }

        Ok(ResolvedConfig { settings, families, dgps, classes, raw: self })
    }
}

impl ResolvedConfig {
    /// 1-D action grid over the configured range with the configured mesh.
    pub fn xi_grid_1d(&self, lo: Option<f64>, hi: Option<f64>) -> GridSpec {
        GridSpec::from_mesh_1d(
            lo.unwrap_or(self.settings.xi_lo),
            hi.unwrap_or(self.settings.xi_hi),
            self.settings.xi_mesh,
        )
    }

    /// Action grid matching a functional's dimension; the 2-D (VaR, ES) grid
    /// uses `settings.xi_points_2d` nodes per axis over the configured range.
    pub fn xi_grid_for(&self, functional: &Functional) -> GridSpec {
        match functional.output_dim() {
            1 => self.xi_grid_1d(None, None),
            _ => GridSpec::new(
                vec![self.settings.xi_lo; 2],
                vec![self.settings.xi_hi; 2],
                self.settings.xi_points_2d,
            ),
        }
    }

    pub fn theta_grid(&self, model: &ParametricModel) -> GridSpec {
        model.theta_box.grid(if model.param_dim() >= 3 {
            self.settings.theta_points_highdim
        } else {
            self.settings.theta_points
        })
    }

    /// θ-grid density for surjectivity probes, capped like θ-grids when the
    /// parameter dimension is high.
    pub fn surjectivity_points(&self, model: &ParametricModel) -> usize {
        if model.param_dim() >= 3 {
            self.settings.theta_points_highdim
        } else {
            self.settings.surjectivity_points
        }
    }
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<BoxBounds, String> {
    if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err("invalid parameter box".into());
    }
    Ok(BoxBounds::new(lo.to_vec(), hi.to_vec()))
}

fn check_mode(mode: &str) -> Result<(), ConfigError> {
    match mode {
        "conditional" | "unconditional" => Ok(()),
        other => Err(invalid(format!("unknown mode '{other}'"))),
    }
}

fn check_expectation_key(expect: Option<&str>) -> Result<(), ConfigError> {
    match expect {
        None => Ok(()),
        Some(s) => {
            Status::parse(s)
                .map(|_| ())
                .ok_or_else(|| invalid(format!("unknown expected verdict '{s}'")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trip() {
        let text = r#"
[settings]
tol = 1e-9
seed = 7

[[families]]
name = "fam"
count = 5

[[consistency_checks]]
loss = "bregman:square"
functional = "mean"
family = "fam"
expect = "strictly-consistent"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let resolved = cfg.resolve(None).unwrap();
        assert_eq!(resolved.families["fam"].len(), 5);
        assert_eq!(resolved.settings.seed, 7);
    }

    #[test]
    fn malformed_loss_key_is_config_error() {
        let text = r#"
[[families]]
name = "fam"

[[consistency_checks]]
loss = "bregman:cube"
functional = "mean"
family = "fam"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.resolve(None), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn misspecified_dgp_is_config_error() {
        let text = r#"
[[dgps]]
name = "bad"
functional = "mean"
model = "linear"
theta0 = [1.0]
theta_lo = [-3.0]
theta_hi = [3.0]
covariates = [[1.0]]
covariate_probs = [1.0]
conditionals = [{ support = [0.0, 1.0], probs = [0.5, 0.5] }]
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = cfg.resolve(None).unwrap_err();
        assert!(err.to_string().contains("Misspecified") || err.to_string().contains("disagrees"));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = "[settings]\nbogus = 1\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }
}
