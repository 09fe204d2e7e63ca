use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample too small: N = {n}, need at least {required}")]
    InsufficientSample { n: usize, required: usize },
    #[error("no observed outcomes: every row has t = 0")]
    NoObservedOutcomes,
    #[error("propensity clamped on {clamps} of {n} rows; moments are not reliable")]
    ExcessiveClamping { clamps: usize, n: usize },
    #[error("weighting matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("{what} is singular beyond ridge rescue; {advice}")]
    Singular {
        what: &'static str,
        advice: &'static str,
    },
    #[error("kernel weights vanish at bandwidth {0}; increase the bandwidth")]
    ZeroKernelMass(f64),
    #[error("every candidate K was skipped")]
    NoCandidates,
    #[error("failed to converge: {0}")]
    NoConvergence(String),
}
