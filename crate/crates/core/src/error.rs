//! Crate-wide error types.

/// Failure of a single step attempt. The adaptive loop treats these as
/// rejections (shrink `h` and retry) until the rejection budget runs out.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepFailure {
    #[error("non-finite drift/diffusion evaluation")]
    NonFinite,
    #[error("Newton iteration did not converge within {0} iterations")]
    NewtonDiverged(u32),
    #[error("singular iteration matrix in implicit stage solve")]
    SingularMatrix,
    #[error("transform domain violation (argument of log <= 0)")]
    DomainViolation,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("method `{method}` does not support {kind} noise")]
    IncompatibleNoise { method: String, kind: String },
    #[error("noise stack: {0}")]
    NoiseStack(String),
    #[error(transparent)]
    Step(#[from] StepFailure),
    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailed { t: f64, reason: String },
    #[error("stability evaluation: {0}")]
    Stability(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
