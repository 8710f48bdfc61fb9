//! Batch front-end: experiment configs in, CSV reports and manifests out.
//!
//! Exit codes are a stable contract: 0 when every declared expectation is
//! met, 1 on verdict or acceptance mismatches, 2 on config errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::checkers::{
    check_conditional_identification, check_conditional_mc_class, check_consistency,
    check_unconditional_identification, check_unconditional_mc, theorem1_audit, AuditGrids,
    Status, Verdict,
};
use crate::config::{ConfigError, ExperimentConfig, ResolvedConfig};
use crate::dgp::{ConditionalDGP, DGPClass, ModelFamily, ParametricModel};
use crate::dist::{DiscreteDistribution, Functional};
use crate::estimators::{
    m_estimate, monte_carlo, z_estimate, EstimatorSpec, MonteCarloReport, OptimizerConfig,
};
use crate::grid::BoxBounds;
use crate::identification::{
    compose_instrument, rank_condition_s2, IdentificationFunction, InstrumentMatrix,
    ModelIdentification,
};
use crate::losses::Loss;
use crate::report::{fmt_f64, sha256_hex, verdict_columns, write_csv, Manifest};

#[derive(Parser, Debug)]
#[command(name = "mchar", version, about = "Loss/estimator consistency auditors and estimators")]
pub struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV reports and the manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for audit matrices.
    #[arg(long, global = true, env = "MCHAR_JOBS", default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the configured loss-vs-functional consistency checks.
    CheckConsistency,
    /// Run the configured conditional/unconditional model-consistency checks.
    CheckModelConsistency,
    /// Run the configured identification checks.
    CheckIdentification,
    /// Audit the implication hierarchy over the configured loss × class matrix.
    Theorem1,
    /// Self-contained mean-zero-covariate linear example: instruments make
    /// the unconditional moment strict.
    ExampleS1 {
        #[arg(long, value_delimiter = ',', default_value = "1000,4000")]
        t_list: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        replications: usize,
    },
    /// Run the configured one-shot estimates.
    Estimate,
    /// Run the configured Monte Carlo studies.
    MonteCarlo,
}

enum CmdError {
    Config(String),
    Run(String),
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Run(format!("io error: {e}"))
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CmdError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool, CmdError> {
    std::fs::create_dir_all(&cli.out)?;
    let jobs = cli.jobs.max(1);
    match &cli.command {
        Command::CheckConsistency => {
            let (resolved, manifest) = load(cli, "check-consistency")?;
            cmd_check_consistency(&resolved, &cli.out, jobs, manifest)
        }
        Command::CheckModelConsistency => {
            let (resolved, manifest) = load(cli, "check-model-consistency")?;
            cmd_check_model_consistency(&resolved, &cli.out, manifest)
        }
        Command::CheckIdentification => {
            let (resolved, manifest) = load(cli, "check-identification")?;
            cmd_check_identification(&resolved, &cli.out, manifest)
        }
        Command::Theorem1 => {
            let (resolved, manifest) = load(cli, "theorem1")?;
            cmd_theorem1(&resolved, &cli.out, jobs, manifest)
        }
        Command::ExampleS1 { t_list, replications } => {
            let seed = cli.seed.unwrap_or(0);
            cmd_example_s1(seed, t_list, *replications, &cli.out, jobs)
        }
        Command::Estimate => {
            let (resolved, manifest) = load(cli, "estimate")?;
            cmd_estimate(&resolved, &cli.out, manifest)
        }
        Command::MonteCarlo => {
            let (resolved, manifest) = load(cli, "monte-carlo")?;
            cmd_monte_carlo(&resolved, &cli.out, manifest)
        }
    }
}

fn load(cli: &Cli, command: &str) -> Result<(ResolvedConfig, Manifest), CmdError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CmdError::Config(format!("{command} requires --config")))?;
    let bytes = std::fs::read(path).map_err(|e| CmdError::Config(e.to_string()))?;
    let config = ExperimentConfig::load(path)?;
    let resolved = config.resolve(cli.seed)?;
    let manifest = Manifest {
        command: command.to_string(),
        config: path.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        seed: resolved.settings.seed,
        jobs: cli.jobs.max(1),
        outputs: Vec::new(),
    };
    Ok((resolved, manifest))
}

fn finish(
    out_dir: &Path,
    mut manifest: Manifest,
    outputs: Vec<String>,
    all_matched: bool,
) -> Result<bool, CmdError> {
    manifest.outputs = outputs;
    manifest.write(out_dir)?;
    Ok(all_matched)
}

fn matches_expectation(expect: &Option<String>, verdict: &Verdict) -> (String, bool) {
    match expect {
        None => (String::new(), true),
        Some(e) => {
            let matched = Status::parse(e) == Some(verdict.status);
            (e.clone(), matched)
        }
    }
}

const VERDICT_COLS: [&str; 5] =
    ["verdict", "witness_member", "witness_point", "witness_gap", "witness_atom"];

fn cmd_check_consistency(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    jobs: usize,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let checks = &resolved.raw.consistency_checks;
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<(Vec<String>, bool), CmdError>> = pool.install(|| {
        checks
            .par_iter()
            .map(|c| {
                let loss = Loss::parse_key(&c.loss).expect("validated");
                let functional = Functional::parse_key(&c.functional).expect("validated");
                let family = &resolved.families[&c.family];
                let grid = match functional.output_dim() {
                    1 => resolved.xi_grid_1d(c.xi_lo, c.xi_hi),
                    _ => resolved.xi_grid_for(&functional),
                };
                let verdict =
                    check_consistency(&loss, &functional, family, &grid, resolved.settings.tol)
                        .map_err(|e| CmdError::Run(e.to_string()))?;
                let (expected, matched) = matches_expectation(&c.expect, &verdict);
                let mut row = vec![
                    c.loss.clone(),
                    c.functional.clone(),
                    c.family.clone(),
                    expected,
                ];
                row.extend(verdict_columns(&verdict));
                row.push(matched.to_string());
                Ok((row, matched))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut all_matched = true;
    for r in results {
        let (row, matched) = r?;
        all_matched &= matched;
        rows.push(row);
    }
    let mut header = vec!["loss", "functional", "family", "expected"];
    header.extend(VERDICT_COLS);
    header.push("matched");
    let path = out_dir.join("consistency.csv");
    write_csv(&path, &header, &rows)?;
    for row in &rows {
        println!(
            "check-consistency {} x {} on {}: {}",
            row[0], row[1], row[2], row[4]
        );
    }
    finish(out_dir, manifest, vec!["consistency.csv".into()], all_matched)
}

fn cmd_check_model_consistency(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let mut rows = Vec::new();
    let mut all_matched = true;
    for c in &resolved.raw.model_consistency_checks {
        let loss = Loss::parse_key(&c.loss).expect("validated");
        let class = &resolved.classes[&c.class];
        let grid = resolved.theta_grid(class.model());
        let verdict = match c.mode.as_str() {
            "conditional" => check_conditional_mc_class(&loss, class, &grid, resolved.settings.tol),
            _ => check_unconditional_mc(&loss, class, &grid, resolved.settings.tol),
        }
        .map_err(|e| CmdError::Run(e.to_string()))?;
        let (expected, matched) = matches_expectation(&c.expect, &verdict);
        all_matched &= matched;
        let mut row = vec![c.loss.clone(), c.class.clone(), c.mode.clone(), expected];
        row.extend(verdict_columns(&verdict));
        row.push(matched.to_string());
        println!("check-model-consistency {} on {} ({}): {}", c.loss, c.class, c.mode, row[4]);
        rows.push(row);
    }
    let mut header = vec!["loss", "class", "mode", "expected"];
    header.extend(VERDICT_COLS);
    header.push("matched");
    write_csv(&out_dir.join("model_consistency.csv"), &header, &rows)?;
    finish(out_dir, manifest, vec!["model_consistency.csv".into()], all_matched)
}

fn psi_for(
    functional: &Functional,
    instrument: &Option<String>,
    model: &ParametricModel,
) -> Result<ModelIdentification, CmdError> {
    let phi = IdentificationFunction::canonical(functional);
    match instrument {
        Some(key) => {
            let a = InstrumentMatrix::parse_key(key, model.covariate_dim, model.output_dim())
                .map_err(|e| CmdError::Config(e.to_string()))?;
            compose_instrument(&a, &phi, model).map_err(|e| CmdError::Config(e.to_string()))
        }
        None => ModelIdentification::composition(&phi, model)
            .map_err(|e| CmdError::Config(e.to_string())),
    }
}

fn cmd_check_identification(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let mut rows = Vec::new();
    let mut all_matched = true;
    for c in &resolved.raw.identification_checks {
        let functional = Functional::parse_key(&c.functional).expect("validated");
        let class = &resolved.classes[&c.class];
        let psi = psi_for(&functional, &c.instrument, class.model())?;
        let grid = resolved.theta_grid(class.model());
        let verdict = match c.mode.as_str() {
            "conditional" => {
                check_conditional_identification(&psi, class, &grid, resolved.settings.tol)
            }
            _ => check_unconditional_identification(&psi, class, &grid, resolved.settings.tol),
        }
        .map_err(|e| CmdError::Run(e.to_string()))?;
        let (expected, matched) = matches_expectation(&c.expect, &verdict);
        all_matched &= matched;
        let instrument = c.instrument.clone().unwrap_or_default();
        let mut row = vec![
            c.functional.clone(),
            instrument,
            c.class.clone(),
            c.mode.clone(),
            expected,
        ];
        row.extend(verdict_columns(&verdict));
        row.push(matched.to_string());
        println!(
            "check-identification {} [{}] on {} ({}): {}",
            c.functional, row[1], c.class, c.mode, row[5]
        );
        rows.push(row);
    }
    let mut header = vec!["functional", "instrument", "class", "mode", "expected"];
    header.extend(VERDICT_COLS);
    header.push("matched");
    write_csv(&out_dir.join("identification.csv"), &header, &rows)?;
    finish(out_dir, manifest, vec!["identification.csv".into()], all_matched)
}

fn cmd_theorem1(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    jobs: usize,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let decl = resolved
        .raw
        .theorem1
        .as_ref()
        .ok_or_else(|| CmdError::Config("config has no [theorem1] section".into()))?;
    let mut cells = Vec::new();
    for loss_key in &decl.losses {
        for class_name in &decl.classes {
            cells.push((loss_key.clone(), class_name.clone()));
        }
    }
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<(Vec<String>, String, bool), CmdError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(loss_key, class_name)| {
                let loss = Loss::parse_key(loss_key).expect("validated");
                let class = &resolved.classes[class_name];
                let functional = class.functional();
                if loss.action_dim() != functional.output_dim() {
                    let row = vec![
                        loss_key.clone(),
                        class_name.clone(),
                        functional.key(),
                        "skipped".into(),
                        String::new(),
                        String::new(),
                        "dimension-mismatch".into(),
                        "dimension-mismatch".into(),
                        "dimension-mismatch".into(),
                        "dimension-mismatch".into(),
                        String::new(),
                        "false".into(),
                    ];
                    let text = format!(
                        "cell {loss_key} x {class_name}: skipped (loss k != functional k)\n"
                    );
                    return Ok((row, text, false));
                }
                let grids = AuditGrids {
                    xi_grid: resolved.xi_grid_for(&functional),
                    theta_grid: resolved.theta_grid(class.model()),
                    tol: resolved.settings.tol,
                    surjectivity_points: resolved.surjectivity_points(class.model()),
                    surjectivity_tol: resolved.settings.surjectivity_tol,
                };
                let report = match theorem1_audit(&loss, class, &grids) {
                    Ok(report) => report,
                    // losses with restricted domains cannot be audited
                    // against every class (for example log-GPL on signed
                    // supports); record the cell as skipped
                    Err(crate::checkers::CheckError::NonFiniteLoss(detail)) => {
                        let row = vec![
                            loss_key.clone(),
                            class_name.clone(),
                            functional.key(),
                            "skipped".into(),
                            String::new(),
                            String::new(),
                            "domain-mismatch".into(),
                            "domain-mismatch".into(),
                            "domain-mismatch".into(),
                            "domain-mismatch".into(),
                            String::new(),
                            "false".into(),
                        ];
                        let text = format!(
                            "cell {loss_key} x {class_name}: skipped (loss domain: {detail})\n"
                        );
                        return Ok((row, text, false));
                    }
                    Err(e) => {
                        return Err(CmdError::Run(format!("{loss_key} x {class_name}: {e}")))
                    }
                };
                let arrow = |o: &crate::checkers::ArrowOutcome| match o {
                    crate::checkers::ArrowOutcome::Confirmed => "confirmed".to_string(),
                    crate::checkers::ArrowOutcome::CounterexampleFound(_) => {
                        "counterexample".to_string()
                    }
                    crate::checkers::ArrowOutcome::NotApplicable(_) => "not-applicable".to_string(),
                };
                let violated = report.any_violation();
                let row = vec![
                    loss_key.clone(),
                    class_name.clone(),
                    functional.key(),
                    report.family_verdict.status.as_str().into(),
                    report.conditional_verdict.status.as_str().into(),
                    report.unconditional_verdict.status.as_str().into(),
                    arrow(&report.arrow_i),
                    arrow(&report.arrow_ii),
                    arrow(&report.arrow_iii),
                    arrow(&report.arrow_iv),
                    report
                        .constructive_check
                        .as_ref()
                        .map(|c| fmt_f64(c.unconditional_gap))
                        .unwrap_or_default(),
                    violated.to_string(),
                ];
                let mut text = format!(
                    "cell {loss_key} x {class_name} (functional {}):\n  verdicts: family {}, conditional {}, unconditional {}\n",
                    functional.key(),
                    report.family_verdict.status.as_str(),
                    report.conditional_verdict.status.as_str(),
                    report.unconditional_verdict.status.as_str(),
                );
                for (name, outcome) in report.arrows() {
                    text.push_str(&format!("  arrow ({name}): {}\n", outcome.label()));
                }
                if let Some(c) = &report.constructive_check {
                    text.push_str(&format!(
                        "  constructive counterexample: member {}, event {:?}, unconditional gap {:.3e} ({})\n",
                        c.member,
                        c.event,
                        c.unconditional_gap,
                        if c.passed { "verified" } else { "FAILED" }
                    ));
                }
                Ok((row, text, violated))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut text_report = String::new();
    let mut any_violation = false;
    for r in results {
        let (row, text, violated) = r?;
        any_violation |= violated;
        rows.push(row);
        text_report.push_str(&text);
    }
    text_report.push_str(if any_violation {
        "RESULT: violations found\n"
    } else {
        "RESULT: no arrow violated\n"
    });
    let header = vec![
        "loss",
        "class",
        "functional",
        "family_verdict",
        "conditional_verdict",
        "unconditional_verdict",
        "arrow_i",
        "arrow_ii",
        "arrow_iii",
        "arrow_iv",
        "constructive_gap",
        "violation",
    ];
    write_csv(&out_dir.join("theorem1.csv"), &header, &rows)?;
    std::fs::write(out_dir.join("theorem1.txt"), &text_report)?;
    print!("{text_report}");
    finish(
        out_dir,
        manifest,
        vec!["theorem1.csv".into(), "theorem1.txt".into()],
        !any_violation,
    )
}

/// The instructive linear-mean setup with E[X] = 0: covariates ±1 with equal
/// mass, conditionals m(x,θ₀) ± 1, θ₀ = 1.5.
pub fn example_s1_dgp(theta0: f64) -> ConditionalDGP {
    let model = ParametricModel::new(
        ModelFamily::Linear,
        1,
        BoxBounds::new(vec![-4.0], vec![4.0]),
    )
    .expect("valid model");
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
        &BoxBounds::new(vec![-4.0], vec![4.0]).grid(81),
    )
    .expect("valid dgp")
}

fn cmd_example_s1(
    seed: u64,
    t_list: &[usize],
    replications: usize,
    out_dir: &Path,
    jobs: usize,
) -> Result<bool, CmdError> {
    let tol = 1e-9;
    let theta0 = 1.5;
    let dgp = example_s1_dgp(theta0);
    let class = DGPClass::new(vec![dgp.clone()]).expect("single member");
    let model = class.model().clone();
    let theta_grid = model.theta_box.grid(81);
    let phi = IdentificationFunction::canonical(&Functional::Mean);
    let raw = ModelIdentification::composition(&phi, &model)
        .map_err(|e| CmdError::Run(e.to_string()))?;
    let instrumented = compose_instrument(&InstrumentMatrix::covariate(1), &phi, &model)
        .map_err(|e| CmdError::Run(e.to_string()))?;

    let mut checks: Vec<(String, String, bool)> = Vec::new();
    let record = |name: &str, value: String, pass: bool, checks: &mut Vec<(String, String, bool)>| {
        println!("example-s1 {name}: {value} ({})", if pass { "ok" } else { "MISMATCH" });
        checks.push((name.to_string(), value, pass));
    };

    let cond = check_conditional_identification(&raw, &class, &theta_grid, tol)
        .map_err(|e| CmdError::Run(e.to_string()))?;
    record(
        "conditional_raw",
        cond.status.as_str().into(),
        cond.status == Status::StrictlyConsistent,
        &mut checks,
    );
    let uncond = check_unconditional_identification(&raw, &class, &theta_grid, tol)
        .map_err(|e| CmdError::Run(e.to_string()))?;
    record(
        "unconditional_raw",
        uncond.status.as_str().into(),
        uncond.status == Status::ConsistentNotStrict,
        &mut checks,
    );
    let uncond_inst = check_unconditional_identification(&instrumented, &class, &theta_grid, tol)
        .map_err(|e| CmdError::Run(e.to_string()))?;
    record(
        "unconditional_instrumented",
        uncond_inst.status.as_str().into(),
        uncond_inst.status == Status::StrictlyConsistent,
        &mut checks,
    );

    // the raw unconditional moment vanishes identically in θ
    let mut max_moment = 0.0f64;
    for theta in theta_grid.nodes() {
        let m = crate::checkers::unconditional_moment(&raw, &dgp, &theta)
            .map_err(|e| CmdError::Run(e.to_string()))?;
        max_moment = max_moment.max(m.iter().fold(0.0f64, |a, c| a.max(c.abs())));
    }
    record(
        "max_unconditional_moment_raw",
        fmt_f64(max_moment),
        max_moment < 1e-12,
        &mut checks,
    );

    let rank_cov = rank_condition_s2(&InstrumentMatrix::covariate(1), &dgp, &[0.7], &[1.1])
        .map_err(|e| CmdError::Run(e.to_string()))?;
    record("rank_s2_covariate", rank_cov.full_rank.to_string(), rank_cov.full_rank, &mut checks);
    let rank_ones = rank_condition_s2(&InstrumentMatrix::ones(1, 1), &dgp, &[0.7], &[1.1])
        .map_err(|e| CmdError::Run(e.to_string()))?;
    record("rank_s2_ones", rank_ones.full_rank.to_string(), !rank_ones.full_rank, &mut checks);

    // Monte Carlo: the instrumented Z-estimator is √T-consistent, the raw
    // moment's objective is flat and the estimates stray
    let cfg = OptimizerConfig {
        seed,
        ..OptimizerConfig::new(model.theta_box.clone())
    };
    let pool = thread_pool(jobs)?;
    let (mc_inst, mc_raw) = pool.install(|| {
        rayon::join(
            || monte_carlo(&dgp, &EstimatorSpec::Z(instrumented.clone()), t_list, replications, seed, &cfg),
            || monte_carlo(&dgp, &EstimatorSpec::Z(raw.clone()), t_list, replications, seed, &cfg),
        )
    });
    let mc_inst = mc_inst.map_err(|e| CmdError::Run(e.to_string()))?;
    let mc_raw = mc_raw.map_err(|e| CmdError::Run(e.to_string()))?;

    if t_list.len() >= 2 {
        let (t_small, t_big) = (t_list[0], t_list[t_list.len() - 1]);
        let ratio = mc_inst.rmse(t_big, 0).unwrap() / mc_inst.rmse(t_small, 0).unwrap();
        let expected = (t_small as f64 / t_big as f64).sqrt();
        let pass = ratio >= expected * 0.76 && ratio <= expected * 1.24;
        record("instrumented_rmse_ratio", fmt_f64(ratio), pass, &mut checks);
    }
    let raw_rmse_large = mc_raw.rmse(t_list[t_list.len() - 1], 0).unwrap();
    record(
        "raw_rmse_large_t",
        fmt_f64(raw_rmse_large),
        raw_rmse_large > 0.5,
        &mut checks,
    );

    let check_rows: Vec<Vec<String>> = checks
        .iter()
        .map(|(n, v, p)| vec![n.clone(), v.clone(), p.to_string()])
        .collect();
    write_csv(&out_dir.join("example_s1_checks.csv"), &["check", "value", "pass"], &check_rows)?;

    let mut mc_rows = Vec::new();
    for (label, report) in [("covariate", &mc_inst), ("none", &mc_raw)] {
        for s in &report.summary {
            mc_rows.push(vec![
                label.to_string(),
                s.sample_size.to_string(),
                s.coord.to_string(),
                fmt_f64(s.bias),
                fmt_f64(s.rmse),
            ]);
        }
    }
    write_csv(
        &out_dir.join("example_s1_mc.csv"),
        &["instrument", "T", "coord", "bias", "rmse"],
        &mc_rows,
    )?;

    let mut est_rows = Vec::new();
    for (label, report) in [("covariate", &mc_inst), ("none", &mc_raw)] {
        for r in &report.rows {
            for (coord, est) in r.theta.iter().enumerate() {
                est_rows.push(vec![
                    label.to_string(),
                    r.sample_size.to_string(),
                    r.replication.to_string(),
                    coord.to_string(),
                    fmt_f64(*est),
                    fmt_f64(theta0),
                    fmt_f64((est - theta0).abs()),
                ]);
            }
        }
    }
    write_csv(
        &out_dir.join("example_s1_estimates.csv"),
        &["instrument", "T", "replication", "coord", "estimate", "theta0", "abs_error"],
        &est_rows,
    )?;

    let manifest = Manifest {
        command: "example-s1".to_string(),
        config: "builtin:example-s1".to_string(),
        config_sha256: sha256_hex(
            format!("seed={seed};t_list={t_list:?};replications={replications}").as_bytes(),
        ),
        seed,
        jobs,
        outputs: Vec::new(),
    };
    let all_pass = checks.iter().all(|(_, _, p)| *p);
    finish(
        out_dir,
        manifest,
        vec![
            "example_s1_checks.csv".into(),
            "example_s1_mc.csv".into(),
            "example_s1_estimates.csv".into(),
        ],
        all_pass,
    )
}

/// Closed-form least squares for linear models, reported as an oracle column.
fn ols_solution(data: &crate::dgp::Dataset) -> Option<Vec<f64>> {
    let p = data.xs.first()?.len();
    let n = data.len();
    let x = DMatrix::from_fn(n, p, |i, j| data.xs[i][j]);
    let y = DVector::from_fn(n, |i, _| data.ys[i]);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    xtx.lu().solve(&xty).map(|v| v.iter().copied().collect())
}

fn estimator_spec(
    estimator: &str,
    loss: &Option<String>,
    instrument: &Option<String>,
    dgp: &ConditionalDGP,
) -> Result<EstimatorSpec, CmdError> {
    match estimator {
        "m" => {
            let loss = Loss::parse_key(loss.as_ref().expect("validated")).expect("validated");
            Ok(EstimatorSpec::M(loss))
        }
        _ => Ok(EstimatorSpec::Z(psi_for(&dgp.functional, instrument, &dgp.model)?)),
    }
}

fn cmd_estimate(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let mut rows = Vec::new();
    for decl in &resolved.raw.estimates {
        let dgp = &resolved.dgps[&decl.dgp];
        let seed = decl.seed.unwrap_or(resolved.settings.seed);
        let data = dgp.sample(decl.sample_size, seed);
        let cfg = OptimizerConfig { seed, ..OptimizerConfig::new(dgp.model.theta_box.clone()) };
        let spec = estimator_spec(&decl.estimator, &decl.loss, &decl.instrument, dgp)?;
        let result = match &spec {
            EstimatorSpec::M(loss) => m_estimate(loss, &dgp.model, &data, &cfg),
            EstimatorSpec::Z(psi) => z_estimate(psi, &data, &cfg),
        }
        .map_err(|e| CmdError::Run(format!("estimate '{}': {e}", decl.name)))?;
        let ols = match dgp.model.family {
            ModelFamily::Linear => ols_solution(&data),
            _ => None,
        };
        for (coord, est) in result.theta.iter().enumerate() {
            rows.push(vec![
                decl.name.clone(),
                decl.estimator.clone(),
                decl.sample_size.to_string(),
                coord.to_string(),
                fmt_f64(*est),
                fmt_f64(dgp.theta0[coord]),
                fmt_f64((est - dgp.theta0[coord]).abs()),
                ols.as_ref().map(|o| fmt_f64(o[coord])).unwrap_or_default(),
                fmt_f64(result.objective),
                result.converged.to_string(),
                result.near_flat.to_string(),
            ]);
        }
        println!(
            "estimate {}: theta = [{}]",
            decl.name,
            result.theta.iter().map(|t| format!("{t:.6}")).collect::<Vec<_>>().join(", ")
        );
    }
    write_csv(
        &out_dir.join("estimates.csv"),
        &[
            "name",
            "estimator",
            "T",
            "coord",
            "estimate",
            "theta0",
            "abs_error",
            "ols_oracle",
            "objective",
            "converged",
            "near_flat",
        ],
        &rows,
    )?;
    finish(out_dir, manifest, vec!["estimates.csv".into()], true)
}

fn cmd_monte_carlo(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    manifest: Manifest,
) -> Result<bool, CmdError> {
    let mut outputs = Vec::new();
    for decl in &resolved.raw.monte_carlos {
        let dgp = &resolved.dgps[&decl.dgp];
        let seed = decl.seed.unwrap_or(resolved.settings.seed);
        let cfg = OptimizerConfig { seed, ..OptimizerConfig::new(dgp.model.theta_box.clone()) };
        let spec = estimator_spec(&decl.estimator, &decl.loss, &decl.instrument, dgp)?;
        let report = monte_carlo(dgp, &spec, &decl.t_list, decl.replications, seed, &cfg)
            .map_err(|e| CmdError::Run(format!("monte carlo '{}': {e}", decl.name)))?;
        write_mc_report(out_dir, &decl.name, &report, &mut outputs)?;
        for s in &report.summary {
            println!(
                "monte-carlo {} T={} coord={}: bias {:.3e}, rmse {:.3e}",
                decl.name, s.sample_size, s.coord, s.bias, s.rmse
            );
        }
    }
    finish(out_dir, manifest, outputs, true)
}

fn write_mc_report(
    out_dir: &Path,
    name: &str,
    report: &MonteCarloReport,
    outputs: &mut Vec<String>,
) -> Result<(), CmdError> {
    let mut est_rows = Vec::new();
    for r in &report.rows {
        for (coord, est) in r.theta.iter().enumerate() {
            est_rows.push(vec![
                r.sample_size.to_string(),
                r.replication.to_string(),
                coord.to_string(),
                fmt_f64(*est),
                fmt_f64(report.theta0[coord]),
                fmt_f64((est - report.theta0[coord]).abs()),
            ]);
        }
    }
    let est_name = format!("{name}_estimates.csv");
    write_csv(
        &out_dir.join(&est_name),
        &["T", "replication", "coord", "estimate", "theta0", "abs_error"],
        &est_rows,
    )?;
    let sum_rows: Vec<Vec<String>> = report
        .summary
        .iter()
        .map(|s| {
            vec![
                s.sample_size.to_string(),
                s.coord.to_string(),
                fmt_f64(s.bias),
                fmt_f64(s.rmse),
            ]
        })
        .collect();
    let sum_name = format!("{name}_summary.csv");
    write_csv(&out_dir.join(&sum_name), &["T", "coord", "bias", "rmse"], &sum_rows)?;
    outputs.push(est_name);
    outputs.push(sum_name);
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CmdError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CmdError::Run(e.to_string()))
}
