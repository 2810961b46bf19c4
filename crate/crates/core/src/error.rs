//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rho must lie strictly inside (0, 1), got {0}")]
    RhoOutOfRange(f64),

    #[error("base rate b must be positive, got {0}")]
    NonPositiveB(f64),

    #[error("vertex count n must be at least 1")]
    EmptyGraph,

    #[error("edge rate {name} = {value} is negative")]
    NegativeEdgeRate { name: &'static str, value: f64 },

    #[error("edge rate {name} = {value} exceeds n = {n}")]
    EdgeRateExceedsN { name: &'static str, value: f64, n: u64 },

    #[error("noise level alpha must lie in [0, 1/2], got {0}")]
    AlphaOutOfRange(f64),

    #[error("label-based message init needs alpha in (0, 1/2), got {0}")]
    InitAlphaOutOfRange(f64),

    #[error("tree exceeded the node cap {cap} while expanding depth {depth}")]
    TreeTooLarge { cap: usize, depth: u32 },

    #[error("tree sampled to depth {depth} is too shallow for a level-{t} evaluation")]
    TreeTooShallow { depth: u32, t: u32 },

    #[error("noisy-boundary evaluation needs noisy labels attached to the tree")]
    MissingNoisyLabels,

    #[error("brute-force enumeration supports at most {cap} hidden labels, tree needs {got}")]
    BruteForceTooLarge { cap: usize, got: usize },

    #[error("iteration count t must be at least 1")]
    ZeroIterations,

    #[error("density-evolution maps need v >= 0, got {0}")]
    NegativeV(f64),

    #[error("h'(v) is only evaluated for v > 0, got {0}")]
    NonPositiveV(f64),

    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),

    #[error("{what} did not converge within {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: u64,
        residual: f64,
    },

    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("operation requires the symmetric parameterization rho = 1/2, mu = nu")]
    NotSymmetric,

    #[error("partition orientation is undefined when a = b")]
    OrientationUndefined,

    #[error("anchor selection failed: {0}")]
    AnchorNotFound(&'static str),

    #[error("recovery partition is uninformative (alpha_hat = {alpha_hat:.4})")]
    RecoveryUninformative { alpha_hat: f64 },

    #[error("recovery produced a degenerate partition: {0}")]
    DegeneratePartition(&'static str),

    #[error("probe set is empty: {0}")]
    EmptyProbeSet(&'static str),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
