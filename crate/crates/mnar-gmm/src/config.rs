//! Run configuration: a TOML file, command-line overrides, and validation
//! into a typed [`Job`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mnar_gmm_core::dgp::Scenario;
use mnar_gmm_core::kselect::KMethod;
use mnar_gmm_core::montecarlo::{KChoice, McSettings, Method};
use mnar_gmm_core::propensity::FeatureMap;
use mnar_gmm_core::sample::TargetFunctional;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Estimate,
    Simulate,
    SelectK,
    Bound,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Estimate => "estimate",
            CommandKind::Simulate => "simulate",
            CommandKind::SelectK => "select-k",
            CommandKind::Bound => "bound",
        }
    }
}

/// Every setting any command understands. Absent keys fall back to the
/// command's defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Estimator for `estimate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Estimators for `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select_k: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mar_features: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_col: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vk_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid run configuration: {e}"))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Values set in `top` win.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, top; command, data, scenario, n, reps, seed, method, methods, k, select_k, kmax,
            feature_map, mar_features, u_col, bandwidth, alpha, standardize, draws, vk_draws, jobs, out)
    }

    /// Validates the settings for the configured command.
    pub fn resolve(&self) -> Result<Job> {
        let command = self.command.ok_or_else(|| anyhow!("no command given"))?;
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let alpha = self.alpha.unwrap_or(mnar_gmm_core::inference::DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            bail!("alpha must lie in (0, 1)");
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                bail!("bandwidth must be positive");
            }
        }
        self.reject_foreign(command)?;
        let mut resolved = self.clone();
        resolved.command = Some(command);
        resolved.alpha = Some(alpha);
        let spec = match command {
            CommandKind::Estimate => JobSpec::Estimate(self.estimate_job(&mut resolved)?),
            CommandKind::SelectK => JobSpec::SelectK(self.select_k_job(&mut resolved)?),
            CommandKind::Simulate => JobSpec::Simulate(self.simulate_job(&mut resolved, alpha)?),
            CommandKind::Bound => JobSpec::Bound(self.bound_job(&mut resolved)?),
        };
        // run-environment settings do not change results
        resolved.out = None;
        resolved.jobs = None;
        Ok(Job { spec, out, jobs: self.jobs.unwrap_or(0), alpha, resolved })
    }

    fn reject_foreign(&self, command: CommandKind) -> Result<()> {
        let used: &[(&str, bool)] = &[
            ("data", self.data.is_some()),
            ("reps", self.reps.is_some()),
            ("method", self.method.is_some()),
            ("methods", self.methods.is_some()),
            ("k", self.k.is_some()),
            ("select-k", self.select_k.is_some()),
            ("feature-map", self.feature_map.is_some()),
            ("mar-features", self.mar_features.is_some()),
            ("u-col", self.u_col.is_some()),
            ("bandwidth", self.bandwidth.is_some()),
            ("standardize", self.standardize.is_some()),
            ("draws", self.draws.is_some()),
            ("vk-draws", self.vk_draws.is_some()),
            ("jobs", self.jobs.is_some()),
        ];
        let allowed: &[&str] = match command {
            CommandKind::Estimate => {
                &["data", "method", "k", "select-k", "feature-map", "mar-features", "u-col", "bandwidth", "standardize"]
            }
            CommandKind::SelectK => &["data", "select-k", "feature-map", "u-col", "standardize"],
            CommandKind::Simulate => &["reps", "methods", "k", "select-k", "bandwidth", "standardize", "jobs"],
            CommandKind::Bound => &["draws", "vk-draws"],
        };
        for (key, set) in used {
            if *set && !allowed.contains(key) {
                bail!("`{key}` does not apply to `{}`", command.name());
            }
        }
        Ok(())
    }

    fn scenario(&self) -> Result<Option<Scenario>> {
        self.scenario.as_deref().map(|s| s.parse::<Scenario>().map_err(|e| anyhow!("{e}"))).transpose()
    }

    fn source(&self, resolved: &mut RunConfig) -> Result<DataSource> {
        match (&self.data, self.scenario()?) {
            (Some(_), Some(_)) => bail!("give either a data file or a scenario, not both"),
            (Some(path), None) => {
                if self.n.is_some() || self.seed.is_some() {
                    bail!("`n` and `seed` only apply to generated data");
                }
                Ok(DataSource::Csv(path.clone()))
            }
            (None, Some(scenario)) => {
                let n = self.n.ok_or_else(|| anyhow!("a generated sample needs `n`"))?;
                let seed = self.seed.ok_or_else(|| anyhow!("a generated sample needs `seed`"))?;
                resolved.scenario = Some(scenario.to_string());
                Ok(DataSource::Scenario { scenario, n, seed })
            }
            (None, None) => bail!("give a data file or a scenario"),
        }
    }

    fn features(&self, source: &DataSource, resolved: &mut RunConfig) -> Result<FeatureMap> {
        let map = match (&self.feature_map, source) {
            (Some(s), _) => FeatureMap::parse(s).map_err(|e| anyhow!("{e}"))?,
            (None, DataSource::Scenario { scenario, .. }) => scenario.features(),
            (None, DataSource::Csv(_)) => FeatureMap::parse(DEFAULT_FEATURES).expect("valid default"),
        };
        resolved.feature_map = Some(map.to_string());
        Ok(map)
    }

    fn target(&self, resolved: &mut RunConfig) -> Result<TargetFunctional> {
        let target = match &self.u_col {
            Some(s) => s.parse::<TargetFunctional>().map_err(|e| anyhow!("{e}"))?,
            None => TargetFunctional::default(),
        };
        resolved.u_col = Some(target.to_string());
        Ok(target)
    }

    fn kmax(&self, source: &DataSource, resolved: &mut RunConfig) -> usize {
        let kmax = self.kmax.unwrap_or(match source {
            DataSource::Scenario { scenario, .. } => scenario.default_kmax(),
            DataSource::Csv(_) => DEFAULT_KMAX,
        });
        resolved.kmax = Some(kmax);
        kmax
    }

    fn k_choice(&self, resolved: &mut RunConfig) -> Result<KChoice> {
        match (self.k, &self.select_k) {
            (Some(_), Some(_)) => bail!("give either a fixed `k` or `select-k`, not both"),
            (Some(k), None) => Ok(KChoice::Fixed(k)),
            (None, s) => {
                let method = s.as_deref().unwrap_or("balance").parse::<KMethod>().map_err(|e| anyhow!("{e}"))?;
                resolved.select_k = Some(method.to_string());
                Ok(KChoice::Select(method))
            }
        }
    }

    fn estimate_job(&self, resolved: &mut RunConfig) -> Result<EstimateJob> {
        let source = self.source(resolved)?;
        let method = self.method.as_deref().unwrap_or("gmm").parse::<Method>().map_err(|e| anyhow!("{e}"))?;
        resolved.method = Some(method.to_string());
        let features = self.features(&source, resolved)?;
        let target = self.target(resolved)?;
        let standardize = self.standardize.unwrap_or(true);
        resolved.standardize = Some(standardize);
        let mut job = EstimateJob {
            source,
            method,
            features,
            target,
            standardize,
            k_choice: KChoice::Fixed(0),
            kmax: 0,
            mar_features: None,
            bandwidth: None,
        };
        match method {
            Method::Gmm => {
                job.k_choice = self.k_choice(resolved)?;
                job.kmax = self.kmax(&job.source, resolved);
            }
            Method::Mar => {
                let mar = match (&self.mar_features, &job.source) {
                    (Some(s), _) => FeatureMap::parse(s).map_err(|e| anyhow!("{e}"))?,
                    (None, DataSource::Scenario { scenario, .. }) => scenario.mar_features(),
                    (None, DataSource::Csv(_)) => FeatureMap::parse(DEFAULT_MAR_FEATURES).expect("valid default"),
                };
                if mar.uses_outcome() {
                    bail!("MAR features cannot include the outcome");
                }
                resolved.mar_features = Some(mar.to_string());
                job.mar_features = Some(mar);
            }
            Method::Mk2 => {
                let h = match (self.bandwidth, &job.source) {
                    (Some(h), _) => h,
                    (None, DataSource::Scenario { scenario, .. }) => scenario.default_bandwidth(),
                    (None, DataSource::Csv(_)) => bail!("the kernel estimator needs `bandwidth`"),
                };
                resolved.bandwidth = Some(h);
                job.bandwidth = Some(h);
            }
        }
        if method != Method::Gmm && (self.k.is_some() || self.select_k.is_some() || self.kmax.is_some()) {
            bail!("K settings only apply to the gmm method");
        }
        if method != Method::Mar && self.mar_features.is_some() {
            bail!("`mar-features` only applies to the mar method");
        }
        if method != Method::Mk2 && self.bandwidth.is_some() {
            bail!("`bandwidth` only applies to the mk2 method");
        }
        Ok(job)
    }

    fn select_k_job(&self, resolved: &mut RunConfig) -> Result<SelectKJob> {
        let source = self.source(resolved)?;
        let features = self.features(&source, resolved)?;
        let target = self.target(resolved)?;
        let method = self.select_k.as_deref().unwrap_or("balance").parse::<KMethod>().map_err(|e| anyhow!("{e}"))?;
        resolved.select_k = Some(method.to_string());
        let kmax = self.kmax(&source, resolved);
        let standardize = self.standardize.unwrap_or(true);
        resolved.standardize = Some(standardize);
        Ok(SelectKJob { source, features, target, method, kmax, standardize })
    }

    fn simulate_job(&self, resolved: &mut RunConfig, alpha: f64) -> Result<McSettings> {
        if self.data.is_some() {
            bail!("`simulate` draws its own data; drop `data`");
        }
        let scenario = self.scenario()?.ok_or_else(|| anyhow!("`simulate` needs a scenario"))?;
        let n = self.n.ok_or_else(|| anyhow!("`simulate` needs `n`"))?;
        let seed = self.seed.ok_or_else(|| anyhow!("`simulate` needs an explicit `seed`"))?;
        let reps = self.reps.unwrap_or(DEFAULT_REPS);
        if reps == 0 {
            bail!("`reps` must be positive");
        }
        let mut settings = McSettings::for_scenario(scenario, n, reps, seed);
        if let Some(list) = &self.methods {
            let mut methods = list
                .iter()
                .flat_map(|s| s.split(','))
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<Method>().map_err(|e| anyhow!("{e}")))
                .collect::<Result<Vec<_>>>()?;
            methods.dedup();
            if methods.is_empty() {
                bail!("`methods` is empty");
            }
            settings.methods = methods;
        }
        settings.k_choice = self.k_choice(resolved)?;
        if let Some(kmax) = self.kmax {
            settings.kmax = kmax;
        }
        if let Some(h) = self.bandwidth {
            settings.bandwidth = h;
        }
        settings.alpha = alpha;
        settings.standardize = self.standardize.unwrap_or(true);
        resolved.scenario = Some(scenario.to_string());
        resolved.reps = Some(reps);
        resolved.methods = Some(settings.methods.iter().map(|m| m.to_string()).collect());
        resolved.kmax = Some(settings.kmax);
        resolved.bandwidth = Some(settings.bandwidth);
        resolved.standardize = Some(settings.standardize);
        Ok(settings)
    }

    fn bound_job(&self, resolved: &mut RunConfig) -> Result<BoundJob> {
        let scenario = self.scenario()?.ok_or_else(|| anyhow!("`bound` needs a scenario"))?;
        let seed = self.seed.ok_or_else(|| anyhow!("`bound` needs an explicit `seed`"))?;
        if self.n.is_some() {
            bail!("`bound` integrates over the population; drop `n`");
        }
        let draws = self.draws.unwrap_or(DEFAULT_BOUND_DRAWS);
        let vk_draws = self.vk_draws.unwrap_or(DEFAULT_VK_DRAWS);
        if draws == 0 || vk_draws == 0 {
            bail!("draw counts must be positive");
        }
        let kmax = self.kmax.unwrap_or(DEFAULT_BOUND_KMAX);
        resolved.scenario = Some(scenario.to_string());
        resolved.draws = Some(draws);
        resolved.vk_draws = Some(vk_draws);
        resolved.kmax = Some(kmax);
        Ok(BoundJob { scenario, seed, draws, vk_draws, kmax })
    }
}

pub const DEFAULT_FEATURES: &str = "const,y";
pub const DEFAULT_MAR_FEATURES: &str = "const,x1";
pub const DEFAULT_KMAX: usize = 7;
pub const DEFAULT_REPS: usize = 500;
pub const DEFAULT_BOUND_DRAWS: usize = 100_000;
pub const DEFAULT_VK_DRAWS: usize = 200_000;
pub const DEFAULT_BOUND_KMAX: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Scenario { scenario: Scenario, n: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct EstimateJob {
    pub source: DataSource,
    pub method: Method,
    pub features: FeatureMap,
    pub target: TargetFunctional,
    pub standardize: bool,
    pub k_choice: KChoice,
    pub kmax: usize,
    pub mar_features: Option<FeatureMap>,
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectKJob {
    pub source: DataSource,
    pub features: FeatureMap,
    pub target: TargetFunctional,
    pub method: KMethod,
    pub kmax: usize,
    pub standardize: bool,
}

#[derive(Debug, Clone)]
pub struct BoundJob {
    pub scenario: Scenario,
    pub seed: u64,
    pub draws: usize,
    pub vk_draws: usize,
    pub kmax: usize,
}

#[derive(Debug, Clone)]
pub enum JobSpec {
    Estimate(EstimateJob),
    SelectK(SelectKJob),
    Simulate(McSettings),
    Bound(BoundJob),
}

/// A validated run.
#[derive(Debug, Clone)]
pub struct Job {
    pub spec: JobSpec,
    pub out: PathBuf,
    /// Worker threads; zero lets the pool decide.
    pub jobs: usize,
    pub alpha: f64,
    /// Effective settings recorded in every output.
    pub resolved: RunConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("command = \"simulate\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn overlay_prefers_the_top_layer() {
        let file = RunConfig::from_toml("command = \"simulate\"\nscenario = \"I\"\nn = 100\nseed = 3\n").unwrap();
        let cli = RunConfig { n: Some(250), ..RunConfig::default() };
        let merged = file.overlay(cli);
        assert_eq!(merged.n, Some(250));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn simulate_requires_a_seed() {
        let cfg = RunConfig {
            command: Some(CommandKind::Simulate),
            scenario: Some("I".into()),
            n: Some(100),
            ..RunConfig::default()
        };
        assert!(cfg.resolve().unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn settings_foreign_to_a_command_are_errors() {
        let cfg = RunConfig {
            command: Some(CommandKind::Bound),
            scenario: Some("I".into()),
            seed: Some(1),
            reps: Some(3),
            ..RunConfig::default()
        };
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn resolved_config_omits_run_environment() {
        let cfg = RunConfig {
            command: Some(CommandKind::Simulate),
            scenario: Some("II".into()),
            n: Some(100),
            seed: Some(9),
            jobs: Some(4),
            out: Some("somewhere".into()),
            ..RunConfig::default()
        };
        let job = cfg.resolve().unwrap();
        assert_eq!(job.jobs, 4);
        assert_eq!(job.resolved.out, None);
        assert_eq!(job.resolved.jobs, None);
        assert_eq!(job.resolved.bandwidth, Some(0.05));
    }
}
