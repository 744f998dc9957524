use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("empty mark support: r_min = {r_min}, r_max = {r_max}")]
    EmptyMarkSupport { r_min: f64, r_max: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("point ({position:?}, r = {radius}) lies outside the partition support")]
    OutsidePartition { position: Vec<f64>, radius: f64 },

    #[error("incompatible partitions: {0}")]
    IncompatiblePartitions(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("pair measure is not symmetric at cells ({a}, {b}): {left} vs {right}")]
    Asymmetric {
        a: usize,
        b: usize,
        left: f64,
        right: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("insufficient hits: {0}")]
    InsufficientHits(String),

    #[error("kernel clamp active: sup psi = {sup_psi} exceeds lambda = {lambda}")]
    KernelClamp { sup_psi: f64, lambda: f64 },

    #[error("event predicate failed: {0}")]
    Event(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
