use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{CommandKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mnar-gmm", version, about = "Sieve two-step GMM for a mean under nonignorable missingness")]
pub struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file [default: out].
    #[arg(long, short, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator to a CSV file or a generated sample.
    Estimate(EstimateArgs),
    /// Monte Carlo study of a simulation scenario.
    Simulate(SimulateArgs),
    /// Criterion path over K = p..K̄.
    SelectK(SelectKArgs),
    /// Efficiency bound and population V_K for a scenario.
    Bound(BoundArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// CSV with header `t,x1,...,xr,y`.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Draw the sample from a scenario (I, II, III, IV) instead.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// gmm, mar or mk2.
    #[arg(long)]
    pub method: Option<String>,
    /// Fixed number of sieve terms.
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Choose K by `balance` or `mse` (default balance).
    #[arg(long, value_name = "CRITERION")]
    pub select_k: Option<String>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Response-model features, e.g. `const,y` or `2*ln(x1),y`.
    #[arg(long)]
    pub feature_map: Option<String>,
    /// Covariate-only features of the MAR model.
    #[arg(long)]
    pub mar_features: Option<String>,
    /// Target column: `y` or `xj`.
    #[arg(long)]
    pub u_col: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use raw rather than standardized covariates in the sieve.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed; required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, short)]
    pub k: Option<usize>,
    #[arg(long, value_name = "CRITERION")]
    pub select_k: Option<String>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub no_standardize: bool,
    /// Worker threads for replications.
    #[arg(long, env = "MNAR_GMM_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// `balance` or `mse`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub feature_map: Option<String>,
    #[arg(long)]
    pub u_col: Option<String>,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo draws of X for the bound.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Draws of (X, Y) for each population V_K.
    #[arg(long)]
    pub vk_draws: Option<usize>,
    /// Largest K for the population V_K path.
    #[arg(long)]
    pub kmax: Option<usize>,
}

fn standardize(no: bool) -> Option<bool> {
    no.then_some(false)
}

impl Cli {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig { out: self.out.clone(), ..RunConfig::default() };
        let source = |c: &mut RunConfig, s: &SourceArgs| {
            c.data = s.data.clone();
            c.scenario = s.scenario.clone();
            c.n = s.n;
            c.seed = s.seed;
        };
        match &self.command {
            Command::Estimate(a) => {
                c.command = Some(CommandKind::Estimate);
                source(&mut c, &a.source);
                c.method = a.method.clone();
                c.k = a.k;
                c.select_k = a.select_k.clone();
                c.kmax = a.kmax;
                c.feature_map = a.feature_map.clone();
                c.mar_features = a.mar_features.clone();
                c.u_col = a.u_col.clone();
                c.bandwidth = a.bandwidth;
                c.alpha = a.alpha;
                c.standardize = standardize(a.no_standardize);
            }
            Command::Simulate(a) => {
                c.command = Some(CommandKind::Simulate);
                c.scenario = a.scenario.clone();
                c.n = a.n;
                c.reps = a.reps;
                c.seed = a.seed;
                c.methods = a.methods.clone();
                c.k = a.k;
                c.select_k = a.select_k.clone();
                c.kmax = a.kmax;
                c.bandwidth = a.bandwidth;
                c.alpha = a.alpha;
                c.standardize = standardize(a.no_standardize);
                c.jobs = a.jobs;
            }
            Command::SelectK(a) => {
                c.command = Some(CommandKind::SelectK);
                source(&mut c, &a.source);
                c.select_k = a.method.clone();
                c.kmax = a.kmax;
                c.feature_map = a.feature_map.clone();
                c.u_col = a.u_col.clone();
                c.standardize = standardize(a.no_standardize);
            }
            Command::Bound(a) => {
                c.command = Some(CommandKind::Bound);
                c.scenario = a.scenario.clone();
                c.seed = a.seed;
                c.draws = a.draws;
                c.vk_draws = a.vk_draws;
                c.kmax = a.kmax;
            }
        }
        c
    }

    /// The file configuration (if any) overlaid with the flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let flags = self.overrides();
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let (Some(a), Some(b)) = (base.command, flags.command) {
            if a != b {
                bail!("configuration file is for `{}` but the command is `{}`", a.name(), b.name());
            }
        }
        Ok(base.overlay(flags))
    }
}
