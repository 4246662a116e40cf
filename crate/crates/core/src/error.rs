use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node {0} has zero degree; degree-normalized shift operators are undefined")]
    IsolatedNode(usize),
    #[error("invalid probability `{name}` = {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("sample covariance is identically zero")]
    DegenerateSamples,
    #[error("relative error matrix is not symmetric (max deviation {0:e})")]
    AsymmetricError(f64),
    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver failed to converge")]
    ConvergenceFailure,
    #[error("gate value {0} outside [0, 1]")]
    GateOutOfRange(f64),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("loss node has shape {0}x{1}, expected a scalar")]
    NonScalarLoss(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("target has zero norm")]
    ZeroTarget,
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("alpha = {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("sequence too short: need more than {needed} steps, have {available}")]
    SequenceTooShort { needed: usize, available: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("degenerate probes: {0}")]
    DegenerateProbes(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
