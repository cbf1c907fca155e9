use thiserror::Error;

/// Errors produced by the guided-flow pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must share a resolution do not.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A byte buffer or text file does not follow its format.
    #[error("format error: {0}")]
    Format(String),
    /// A value cannot be represented in the target format.
    #[error("value out of range: {0}")]
    Range(String),
    /// A parameter set violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Not enough samples to run an estimator.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    /// RANSAC did not find a model with enough support.
    #[error("no consensus: best model had {inliers} inliers")]
    NoConsensus { inliers: usize },
    /// An input with nothing to operate on.
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}
