//! Crate-wide error type.

/// Errors produced by any fallible operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {details}")]
    DimMismatch { op: &'static str, details: String },

    #[error("non-finite entries encountered in {0}")]
    NonFinite(&'static str),

    #[error("svd failed to converge after {iterations} iterations")]
    SvdNonConvergence { iterations: usize },

    #[error("cholesky: matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("stale trace: network parameters changed after the forward pass")]
    StaleTrace,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (value {value})")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("brute-force instance too large: {entries} entries exceeds limit {limit}")]
    InstanceTooLarge { entries: usize, limit: usize },

    #[error("latent codes collide: samples {i} and {j} share a coefficient vector")]
    CoefficientCollision { i: usize, j: usize },

    #[error("duplicate latent projection for samples {i} and {j}")]
    DuplicateProjection { i: usize, j: usize },

    #[error("candidate residual support does not match the sparse component at sample {sample}")]
    SupportMismatch { sample: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "ground-truth generator rejected after {attempts} attempts: \
         rank-{rank} residuals {residuals:?} never exceeded {threshold}"
    )]
    GroundTruthRejected {
        attempts: usize,
        rank: usize,
        residuals: Vec<f64>,
        threshold: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("idx parse error at byte {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
