//! Executes a validated [`Job`] and writes its artifacts.

use std::path::PathBuf;

use anyhow::anyhow;
use mnar_gmm_core::baselines::{mar_estimate, mk2_estimate, Mk2Config};
use mnar_gmm_core::basis::BasisSpec;
use mnar_gmm_core::dgp::{efficiency_bound, generate, ScenarioConfig};
use mnar_gmm_core::gmm::GmmOptions;
use mnar_gmm_core::inference::vk_population_oracle;
use mnar_gmm_core::kselect::{select_k, KScanResult, KScanSetup};
use mnar_gmm_core::montecarlo::{aggregate, run_replication, KChoice, McSettings, McSummary, Method, ReplicationResult};
use mnar_gmm_core::propensity::PropensityModel;
use mnar_gmm_core::sample::ObservedSample;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BoundJob, DataSource, EstimateJob, Job, JobSpec, SelectKJob};
use crate::data::load_csv;
use crate::report::{num, Metadata, OutputDir};

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum RunError {
    /// Bad settings or unreadable input: exit 1.
    Config(anyhow::Error),
    /// The estimator itself failed: exit 2.
    Estimation(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Estimation(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e:#}"),
            RunError::Estimation(e) => write!(f, "estimation failed: {e:#}"),
        }
    }
}

impl std::error::Error for RunError {}

fn config_err(e: impl Into<anyhow::Error>) -> RunError {
    RunError::Config(e.into())
}

fn estimation_err(e: impl std::fmt::Display) -> RunError {
    RunError::Estimation(anyhow!("{e}"))
}

pub type RunResult<T> = Result<T, RunError>;

pub fn run(job: &Job) -> RunResult<Vec<PathBuf>> {
    let out = OutputDir::create(&job.out, Metadata::new(&job.resolved)).map_err(config_err)?;
    match &job.spec {
        JobSpec::Estimate(e) => estimate(e, job.alpha, &out),
        JobSpec::SelectK(s) => run_select_k(s, &out),
        JobSpec::Simulate(s) => simulate(s, job.jobs, &out),
        JobSpec::Bound(b) => bound(b, &out),
    }
}

fn load(source: &DataSource) -> RunResult<ObservedSample> {
    match source {
        DataSource::Csv(path) => load_csv(path).map_err(config_err),
        DataSource::Scenario { scenario, n, seed } => {
            generate(&ScenarioConfig { scenario: *scenario, n: *n, seed: *seed }).map_err(estimation_err)
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    n: usize,
    n_observed: usize,
    missing_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step1_objective: Option<f64>,
    converged: bool,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_clamps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weighting_eigen_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weighting_ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_selection: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_note: Option<String>,
}

#[derive(Debug, Serialize)]
#[allow(non_snake_case)]
struct FitReport {
    method: String,
    K: Option<usize>,
    p: usize,
    gamma_hat: Vec<f64>,
    theta_hat: f64,
    se_theta: Option<f64>,
    ci: Option<(f64, f64)>,
    alpha: f64,
    V_hat: Option<Vec<Vec<f64>>>,
    feature_map: String,
    target: String,
    diagnostics: Diagnostics,
}

fn base_diagnostics(sample: &ObservedSample) -> Diagnostics {
    Diagnostics {
        n: sample.n(),
        n_observed: sample.n_observed(),
        missing_rate: sample.missing_rate(),
        objective: None,
        step1_objective: None,
        converged: true,
        iterations: 0,
        n_clamps: None,
        weighting_eigen_range: None,
        weighting_ridge: None,
        score_norm: None,
        k_selection: None,
        variance_note: None,
    }
}

fn estimate(job: &EstimateJob, alpha: f64, out: &OutputDir) -> RunResult<Vec<PathBuf>> {
    let sample = load(&job.source)?;
    check_columns(&sample, job)?;
    let mut written = Vec::new();
    let opts = GmmOptions::default();
    let mut diag = base_diagnostics(&sample);
    let report = match job.method {
        Method::Gmm => {
            let model = PropensityModel::new(job.features.clone());
            let est = mnar_gmm_core::montecarlo::fit_gmm(
                &sample,
                &model,
                job.target,
                job.k_choice,
                job.kmax,
                job.standardize,
                &opts,
                alpha,
            )
            .map_err(estimation_err)?;
            let fit = &est.fit;
            diag.objective = Some(fit.objective_value);
            diag.step1_objective = Some(fit.step1.objective);
            diag.converged = fit.converged;
            diag.iterations = fit.iterations;
            diag.n_clamps = Some(fit.n_clamps);
            diag.weighting_eigen_range = Some((fit.weighting.min_eig, fit.weighting.max_eig));
            diag.weighting_ridge = Some(fit.weighting.ridge);
            if let Some(scan) = &est.scan {
                diag.k_selection = Some(scan.method.to_string());
                written.push(write_kscan(scan, out)?);
            }
            if est.variance.is_none() {
                diag.variance_note = Some("variance matrix is singular at this K".into());
            }
            let v = est.variance.as_ref();
            FitReport {
                method: job.method.to_string(),
                K: Some(est.k),
                p: fit.p,
                gamma_hat: fit.gamma_hat.clone(),
                theta_hat: fit.theta_hat,
                se_theta: v.map(|v| v.se_theta),
                ci: v.map(|v| v.ci_theta),
                alpha,
                V_hat: v.map(|v| rows(&v.v_hat)),
                feature_map: job.features.to_string(),
                target: job.target.to_string(),
                diagnostics: diag,
            }
        }
        Method::Mar => {
            let features = job.mar_features.as_ref().expect("resolved for mar");
            let mar = mar_estimate(&sample, features, job.target, &opts, alpha).map_err(estimation_err)?;
            diag.objective = Some(mar.fit.objective_value);
            diag.converged = mar.fit.converged;
            diag.iterations = mar.fit.iterations;
            diag.n_clamps = Some(mar.fit.n_clamps);
            if mar.variance.is_none() {
                diag.variance_note = Some("variance matrix is singular".into());
            }
            let v = mar.variance.as_ref();
            FitReport {
                method: job.method.to_string(),
                K: Some(features.len()),
                p: features.len(),
                gamma_hat: mar.gamma.clone(),
                theta_hat: mar.theta,
                se_theta: v.map(|v| v.se_theta),
                ci: v.map(|v| v.ci_theta),
                alpha,
                V_hat: v.map(|v| rows(&v.v_hat)),
                feature_map: features.to_string(),
                target: job.target.to_string(),
                diagnostics: diag,
            }
        }
        Method::Mk2 => {
            let model = PropensityModel::new(job.features.clone());
            let h = job.bandwidth.expect("resolved for mk2");
            let cfg = Mk2Config { alpha, ..Mk2Config::new(h) };
            let fit = mk2_estimate(&sample, &model, job.target, &cfg).map_err(estimation_err)?;
            diag.converged = true;
            diag.iterations = fit.iterations;
            diag.score_norm = Some(fit.score_norm);
            if fit.se_theta.is_none() {
                diag.variance_note = Some("sandwich variance unavailable".into());
            }
            FitReport {
                method: job.method.to_string(),
                K: None,
                p: model.p(),
                gamma_hat: fit.gamma.clone(),
                theta_hat: fit.theta,
                se_theta: fit.se_theta,
                ci: fit.ci_theta,
                alpha,
                V_hat: None,
                feature_map: job.features.to_string(),
                target: job.target.to_string(),
                diagnostics: diag,
            }
        }
    };
    log::info!("θ̂ = {:.6}", report.theta_hat);
    written.push(out.write_json("fit.json", &report).map_err(config_err)?);
    Ok(written)
}

/// The response model and target must only reference existing columns.
fn check_columns(sample: &ObservedSample, job: &EstimateJob) -> RunResult<()> {
    let mut need = job.features.required_covariates();
    if let Some(m) = &job.mar_features {
        need = need.max(m.required_covariates());
    }
    if let mnar_gmm_core::sample::TargetSource::Covariate(j) = job.target.source {
        need = need.max(j + 1);
    }
    if need > sample.r() {
        return Err(config_err(anyhow!("settings reference x{need} but the data has {} covariates", sample.r())));
    }
    Ok(())
}

fn write_kscan(scan: &KScanResult, out: &OutputDir) -> RunResult<PathBuf> {
    let rows: Vec<Vec<String>> = scan
        .candidates
        .iter()
        .map(|c| vec![c.k.to_string(), num(c.criterion), u8::from(c.k == scan.chosen).to_string()])
        .collect();
    for c in &scan.candidates {
        if let Some(reason) = &c.skipped {
            log::warn!("K = {} skipped: {reason}", c.k);
        }
    }
    out.write_csv("kscan.csv", &["K", "criterion", "chosen"], &rows).map_err(config_err)
}

fn run_select_k(job: &SelectKJob, out: &OutputDir) -> RunResult<Vec<PathBuf>> {
    let sample = load(&job.source)?;
    if job.features.required_covariates() > sample.r() {
        return Err(config_err(anyhow!("feature map references columns the data does not have")));
    }
    let model = PropensityModel::new(job.features.clone());
    let basis = if job.standardize {
        BasisSpec::standardized(sample.r(), job.kmax, sample.covariates())
    } else {
        BasisSpec::power_series(sample.r(), job.kmax)
    }
    .map_err(config_err)?;
    let opts = GmmOptions::default();
    let setup = KScanSetup { sample: &sample, model: &model, target: job.target, basis: &basis, options: &opts };
    let scan = select_k(&setup, job.method, job.kmax).map_err(estimation_err)?;
    log::info!("chosen K = {}", scan.chosen);
    Ok(vec![write_kscan(&scan, out)?])
}

/// Runs the replications on a pool of `jobs` threads (zero: pool default).
/// Results come back in replication order whatever the thread count.
pub fn run_replications(settings: &McSettings, jobs: usize) -> anyhow::Result<Vec<ReplicationResult>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| (0..settings.reps).into_par_iter().map(|j| run_replication(settings, j)).collect()))
}

pub fn simulate_summary(settings: &McSettings, jobs: usize) -> anyhow::Result<(McSummary, Vec<ReplicationResult>)> {
    let results = run_replications(settings, jobs)?;
    Ok((aggregate(settings, &results), results))
}

fn simulate(settings: &McSettings, jobs: usize, out: &OutputDir) -> RunResult<Vec<PathBuf>> {
    let (summary, results) = simulate_summary(settings, jobs).map_err(config_err)?;
    let mut written = Vec::new();

    let mut header = vec!["statistic".to_string()];
    header.extend(summary.estimators.iter().map(|e| e.method.to_string()));
    let stat_row = |name: &str, f: &dyn Fn(&mnar_gmm_core::montecarlo::EstimatorSummary) -> String| {
        let mut row = vec![name.to_string()];
        row.extend(summary.estimators.iter().map(f));
        row
    };
    let table = vec![
        stat_row("Bias", &|e| num(Some(e.bias))),
        stat_row("Stdev", &|e| num(Some(e.stdev))),
        stat_row("MSE", &|e| num(Some(e.mse))),
        stat_row("CP", &|e| num(e.cp)),
        stat_row("J", &|e| e.j.to_string()),
        stat_row("failures", &|e| e.failures.to_string()),
    ];
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    written.push(out.write_csv("table.csv", &header_refs, &table).map_err(config_err)?);

    let mut long = Vec::new();
    for r in &results {
        for o in &r.outcomes {
            long.push(vec![
                r.rep.to_string(),
                o.method.to_string(),
                num(o.theta),
                num(o.se),
                o.covered.map_or("NA".into(), |c| u8::from(c).to_string()),
                o.k.map_or("NA".into(), |k| k.to_string()),
                o.error.clone().unwrap_or_default(),
            ]);
        }
    }
    written.push(
        out.write_csv("replications.csv", &["rep", "method", "theta", "se", "covered", "K", "error"], &long)
            .map_err(config_err)?,
    );

    let ks: Vec<usize> = match settings.k_choice {
        KChoice::Select(_) => (settings.scenario.gamma0().len()..=settings.kmax).collect(),
        KChoice::Fixed(k) => vec![k],
    };
    let mut hist: Vec<Vec<String>> = ks
        .iter()
        .map(|k| vec![k.to_string(), summary.k_histogram.get(k).copied().unwrap_or(0).to_string()])
        .collect();
    for (k, c) in &summary.k_histogram {
        if !ks.contains(k) {
            hist.push(vec![k.to_string(), c.to_string()]);
        }
    }
    if settings.methods.contains(&Method::Gmm) {
        written.push(out.write_csv("k_histogram.csv", &["K", "count"], &hist).map_err(config_err)?);
    }

    #[derive(Serialize)]
    struct SummaryJson {
        scenario: String,
        n: usize,
        reps: usize,
        theta0: f64,
        mean_missing_rate: f64,
        estimators: Vec<EstimatorJson>,
    }
    #[derive(Serialize)]
    struct EstimatorJson {
        method: String,
        j: usize,
        failures: usize,
        bias: f64,
        stdev: f64,
        mse: f64,
        cp: Option<f64>,
        flagged: bool,
    }
    let json = SummaryJson {
        scenario: summary.scenario.to_string(),
        n: summary.n,
        reps: summary.reps,
        theta0: summary.scenario.theta0(),
        mean_missing_rate: summary.mean_missing_rate,
        estimators: summary
            .estimators
            .iter()
            .map(|e| EstimatorJson {
                method: e.method.to_string(),
                j: e.j,
                failures: e.failures,
                bias: e.bias,
                stdev: e.stdev,
                mse: e.mse,
                cp: e.cp,
                flagged: e.flagged,
            })
            .collect(),
    };
    written.push(out.write_json("summary.json", &json).map_err(config_err)?);
    for e in &summary.estimators {
        if e.flagged {
            log::warn!("{}: {} of {} replications failed", e.method, e.failures, summary.reps);
        }
    }
    Ok(written)
}

fn bound(job: &BoundJob, out: &OutputDir) -> RunResult<Vec<PathBuf>> {
    let eb = efficiency_bound(&job.scenario, job.draws, job.seed).map_err(estimation_err)?;
    #[derive(Serialize)]
    #[allow(non_snake_case)]
    struct VkRow {
        K: usize,
        v_theta: f64,
        relative_gap: f64,
        V: Vec<Vec<f64>>,
    }
    let p = job.scenario.gamma0().len();
    let mut vk = Vec::new();
    for k in p..=job.kmax {
        match vk_population_oracle(&job.scenario, k, job.vk_draws, job.seed) {
            Ok(o) => {
                let v = o.v[(p, p)];
                vk.push(VkRow { K: k, v_theta: v, relative_gap: (v - eb.v_theta) / eb.v_theta, V: rows(&o.v) });
            }
            Err(e) => log::warn!("V_K oracle at K = {k} failed: {e}"),
        }
    }
    #[derive(Serialize)]
    struct BoundJson {
        scenario: String,
        v_theta: f64,
        v_gamma: Vec<Vec<f64>>,
        kappa: Vec<f64>,
        info_gamma: Vec<Vec<f64>>,
        draws: usize,
        vk_draws: usize,
        vk: Vec<VkRow>,
    }
    let json = BoundJson {
        scenario: job.scenario.to_string(),
        v_theta: eb.v_theta,
        v_gamma: rows(&eb.v_gamma),
        kappa: vector(&eb.kappa),
        info_gamma: rows(&eb.info_gamma),
        draws: job.draws,
        vk_draws: job.vk_draws,
        vk,
    };
    Ok(vec![out.write_json("bound.json", &json).map_err(config_err)?])
}
