//! Command-line front end for the sieve GMM estimator: CSV ingestion, run
//! configuration, parallel Monte Carlo and result files.

pub mod cli;
pub mod config;
pub mod data;
pub mod report;
pub mod run;

pub use config::{Job, RunConfig};
pub use run::{run, run_replications, simulate_summary, RunError};
