use thiserror::Error;

/// Errors raised across the shortfall toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("definiteness error: {0}")]
    Definiteness(String),

    #[error("degenerate benchmark: beta is zero, only the feasibility check applies")]
    DegenerateBenchmark,

    #[error("wrong scenario kind: expected {expected}")]
    WrongKind { expected: &'static str },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("condition (N) part 1 fails: sigma Q1 sigma^T is singular")]
    ConditionN1,

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("grid solver did not converge after {iterations} iterations (last update {last_update:.3e})")]
    NoConvergence { iterations: usize, last_update: f64 },

    #[error("drift does not point inward at the boundary: {0}")]
    OutwardDrift(String),

    #[error("density is not normalizable on the grid: {0}")]
    NonNormalizable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("rate oracle failed at lambda = {lambda}: {reason}")]
    Oracle { lambda: f64, reason: String },

    #[error("could not bracket the dual root after {doublings} doublings (lambda_max = {lambda_max})")]
    Unbracketable { doublings: usize, lambda_max: f64 },

    #[error("{0}")]
    SafeSecurityOptimal(String),

    #[error("boundary solution refused: {0}")]
    BoundaryRefused(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("path explosion: {flagged} of {total} paths exceeded the state bound")]
    PathExplosion { flagged: usize, total: usize },

    #[error("insufficient data: {0}")]
    Insufficient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
