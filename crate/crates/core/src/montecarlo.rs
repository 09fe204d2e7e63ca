//! Replication runner and Monte Carlo summaries.
//!
//! Replication `j` draws its sample from stream `j` of the master seed, so
//! results do not depend on the order in which replications are executed.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::baselines::{mar_estimate, mk2_estimate, Mk2Config};
use crate::basis::BasisSpec;
use crate::dgp::{draw_full, stream_rng, Scenario};
use crate::gmm::{GmmFit, GmmOptions, MomentSystem};
use crate::inference::{fit_variance, VarianceEstimate, DEFAULT_ALPHA};
use crate::kselect::{select_k, KMethod, KScanResult, KScanSetup};
use crate::propensity::PropensityModel;
use crate::sample::{ObservedSample, TargetFunctional};
use crate::{Error, Result};

/// Share of failed replications above which a summary is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gmm,
    Mar,
    Mk2,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gmm => "gmm",
            Method::Mar => "mar",
            Method::Mk2 => "mk2",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gmm" => Ok(Method::Gmm),
            "mar" => Ok(Method::Mar),
            "mk2" => Ok(Method::Mk2),
            other => Err(Error::InvalidInput(alloc::format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    Select(KMethod),
}

/// Two-step fit at a fixed or data-driven `K`, with its variance.
#[derive(Debug, Clone)]
pub struct GmmEstimate {
    pub k: usize,
    pub fit: GmmFit,
    pub variance: Option<VarianceEstimate>,
    pub scan: Option<KScanResult>,
    pub basis: BasisSpec,
}

/// Builds a standardized basis up to `kmax`, chooses `K`, fits, and
/// estimates the variance. A failed variance leaves `variance = None`.
pub fn fit_gmm(
    sample: &ObservedSample,
    model: &PropensityModel,
    target: TargetFunctional,
    k_choice: KChoice,
    kmax: usize,
    standardize: bool,
    opts: &GmmOptions,
    alpha: f64,
) -> Result<GmmEstimate> {
    let top = match k_choice {
        KChoice::Fixed(k) => k,
        KChoice::Select(_) => kmax,
    };
    let basis = if standardize {
        BasisSpec::standardized(sample.r(), top, sample.covariates())?
    } else {
        BasisSpec::power_series(sample.r(), top)?
    };
    let (k, scan) = match k_choice {
        KChoice::Fixed(k) => (k, None),
        KChoice::Select(method) => {
            let setup = KScanSetup { sample, model, target, basis: &basis, options: opts };
            let scan = select_k(&setup, method, kmax)?;
            (scan.chosen, Some(scan))
        }
    };
    let system = MomentSystem::sieve(basis.with_k(k)?, model.clone(), target)?;
    let prep = system.prepare(sample)?;
    let fit = match scan.as_ref().and_then(|s| s.chosen_candidate().fit.clone()) {
        Some(fit) => fit,
        None => prep.fit(opts)?,
    };
    if !fit.converged {
        return Err(Error::NoConvergence(alloc::format!("two-step fit at K = {k} did not converge")));
    }
    let variance = match fit_variance(&prep, &fit, alpha) {
        Ok(v) => Some(v),
        Err(e) => {
            log::debug!("variance at K = {k} failed: {e}");
            None
        }
    };
    Ok(GmmEstimate { k, fit, variance, scan, basis: basis.with_k(k)? })
}

#[derive(Debug, Clone)]
pub struct McSettings {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub k_choice: KChoice,
    pub kmax: usize,
    pub bandwidth: f64,
    pub alpha: f64,
    pub standardize: bool,
    pub gmm: GmmOptions,
}

impl McSettings {
    /// Defaults of the published design for a scenario.
    pub fn for_scenario(scenario: Scenario, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            reps,
            seed,
            methods: alloc::vec![Method::Gmm, Method::Mk2, Method::Mar],
            k_choice: KChoice::Select(KMethod::Balance),
            kmax: scenario.default_kmax(),
            bandwidth: scenario.default_bandwidth(),
            alpha: DEFAULT_ALPHA,
            standardize: true,
            gmm: GmmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub theta: Option<f64>,
    pub se: Option<f64>,
    pub covered: Option<bool>,
    pub k: Option<usize>,
    pub error: Option<String>,
}

impl MethodOutcome {
    fn failed(method: Method, e: Error) -> Self {
        Self { method, theta: None, se: None, covered: None, k: None, error: Some(e.to_string()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    pub n_observed: usize,
    pub outcomes: Vec<MethodOutcome>,
}

pub fn run_replication(settings: &McSettings, rep: usize) -> ReplicationResult {
    let scenario = settings.scenario;
    let theta0 = scenario.theta0();
    let mut rng = stream_rng(settings.seed, rep as u64);
    let sample = match draw_full(&scenario, settings.n, &mut rng) {
        Ok(d) => d.sample,
        Err(e) => {
            let outcomes = settings.methods.iter().map(|&m| MethodOutcome::failed(m, e.clone())).collect();
            return ReplicationResult { rep, n_observed: 0, outcomes };
        }
    };
    let model = PropensityModel::new(scenario.features());
    let target = TargetFunctional::default();
    let covered = |ci: Option<(f64, f64)>| ci.map(|(lo, hi)| lo <= theta0 && theta0 <= hi);
    let outcomes = settings
        .methods
        .iter()
        .map(|&method| {
            let res = match method {
                Method::Gmm => fit_gmm(
                    &sample,
                    &model,
                    target,
                    settings.k_choice,
                    settings.kmax,
                    settings.standardize,
                    &settings.gmm,
                    settings.alpha,
                )
                .map(|g| MethodOutcome {
                    method,
                    theta: Some(g.fit.theta_hat),
                    se: g.variance.as_ref().map(|v| v.se_theta),
                    covered: covered(g.variance.as_ref().map(|v| v.ci_theta)),
                    k: Some(g.k),
                    error: None,
                }),
                Method::Mar => {
                    mar_estimate(&sample, &scenario.mar_features(), target, &settings.gmm, settings.alpha).map(|m| {
                        MethodOutcome {
                            method,
                            theta: Some(m.theta),
                            se: m.variance.as_ref().map(|v| v.se_theta),
                            covered: covered(m.variance.as_ref().map(|v| v.ci_theta)),
                            k: None,
                            error: None,
                        }
                    })
                }
                Method::Mk2 => {
                    let cfg = Mk2Config { alpha: settings.alpha, ..Mk2Config::new(settings.bandwidth) };
                    mk2_estimate(&sample, &model, target, &cfg).map(|m| MethodOutcome {
                        method,
                        theta: Some(m.theta),
                        se: m.se_theta,
                        covered: covered(m.ci_theta),
                        k: None,
                        error: None,
                    })
                }
            };
            res.unwrap_or_else(|e| MethodOutcome::failed(method, e))
        })
        .collect();
    ReplicationResult { rep, n_observed: sample.n_observed(), outcomes }
}

/// Bias, spread and coverage of one estimator over the replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub method: Method,
    /// Successful replications.
    pub j: usize,
    pub failures: usize,
    pub bias: f64,
    /// Divisor `J`, so that `mse = bias² + stdev²`.
    pub stdev: f64,
    pub mse: f64,
    /// `None` when no replication produced a standard error.
    pub cp: Option<f64>,
    pub flagged: bool,
}

/// Summary over `(θ̂, covered)` pairs; `failures` counts excluded replications.
pub fn summarize(method: Method, theta0: f64, values: &[(f64, Option<bool>)], failures: usize) -> EstimatorSummary {
    let j = values.len();
    let jf = j as f64;
    let (bias, stdev, mse) = if j == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = values.iter().map(|v| v.0).sum::<f64>() / jf;
        let var = values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / jf;
        let mse = values.iter().map(|v| (v.0 - theta0).powi(2)).sum::<f64>() / jf;
        (mean - theta0, var.sqrt(), mse)
    };
    let with_ci: Vec<bool> = values.iter().filter_map(|v| v.1).collect();
    let cp = (!with_ci.is_empty()).then(|| with_ci.iter().filter(|&&c| c).count() as f64 / with_ci.len() as f64);
    let total = j + failures;
    let flagged = total > 0 && failures as f64 > FAILURE_FLAG_RATE * total as f64;
    EstimatorSummary { method, j, failures, bias, stdev, mse, cp, flagged }
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
    /// Selected `K` → count, GMM only.
    pub k_histogram: BTreeMap<usize, usize>,
    pub mean_missing_rate: f64,
}

impl McSummary {
    pub fn get(&self, method: Method) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.method == method)
    }
}

/// Reduces replication results in replication order.
pub fn aggregate(settings: &McSettings, results: &[ReplicationResult]) -> McSummary {
    let theta0 = settings.scenario.theta0();
    let mut sorted: Vec<&ReplicationResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let mut estimators = Vec::new();
    let mut k_histogram = BTreeMap::new();
    for &method in &settings.methods {
        let mut values = Vec::new();
        let mut failures = 0;
        for r in &sorted {
            match r.outcomes.iter().find(|o| o.method == method) {
                Some(MethodOutcome { theta: Some(t), covered, k, .. }) => {
                    values.push((*t, *covered));
                    if let Some(k) = k {
                        *k_histogram.entry(*k).or_insert(0) += 1;
                    }
                }
                _ => failures += 1,
            }
        }
        let s = summarize(method, theta0, &values, failures);
        if s.flagged {
            log::warn!("{method}: {failures} of {} replications failed", sorted.len());
        }
        estimators.push(s);
    }
    let n = settings.n.max(1) as f64;
    let mean_missing_rate = if sorted.is_empty() {
        f64::NAN
    } else {
        sorted.iter().map(|r| 1.0 - r.n_observed as f64 / n).sum::<f64>() / sorted.len() as f64
    };
    McSummary {
        scenario: settings.scenario,
        n: settings.n,
        reps: settings.reps,
        seed: settings.seed,
        estimators,
        k_histogram,
        mean_missing_rate,
    }
}

/// Sequential driver; callers wanting parallelism map `run_replication`
/// over `0..reps` themselves and call [`aggregate`].
pub fn run_monte_carlo(settings: &McSettings) -> Result<(McSummary, Vec<ReplicationResult>)> {
    if settings.reps == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    let results: Vec<ReplicationResult> = (0..settings.reps).map(|j| run_replication(settings, j)).collect();
    Ok((aggregate(settings, &results), results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_stub_has_zero_error_and_no_coverage() {
        let v = [(1.0, None); 5];
        let s = summarize(Method::Gmm, 1.0, &v, 0);
        assert_eq!((s.bias, s.stdev, s.mse), (0.0, 0.0, 0.0));
        assert_eq!(s.cp, None);
        assert!(!s.flagged);
    }

    #[test]
    fn mse_decomposes() {
        let v = [(0.5, Some(true)), (1.5, Some(false)), (2.0, Some(true)), (1.1, None)];
        let s = summarize(Method::Mar, 1.0, &v, 1);
        assert!((s.mse - (s.bias * s.bias + s.stdev * s.stdev)).abs() < 1e-15);
        assert_eq!(s.cp, Some(2.0 / 3.0));
        assert!(s.flagged);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Gmm, Method::Mar, Method::Mk2] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }
}
