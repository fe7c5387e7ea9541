use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("non-unit leading term: {0}")]
    NonUnitLeading(String),
    #[error("base exponent mismatch")]
    BaseMismatch,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("pole at s = {location}: residue {residue}")]
    Pole { location: String, residue: String },
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
    #[error("singular center: {0}")]
    SingularCenter(String),
    #[error("collar too small: {0}")]
    CollarTooSmall(String),
    #[error("beyond first log order: requested {requested}, max {max}")]
    BeyondFirstLog { requested: usize, max: usize },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("solution left admissible cone at r = {0}")]
    LeftAdmissibleCone(f64),
    #[error("indicial collision at order {0}")]
    IndicialCollision(i32),
    #[error("near L2 eigenvalue: s(n-s) in sigma_pp suspected (conditioning {0:e})")]
    NearEigenvalue(f64),
    #[error("Frobenius order insufficient: matching-radius sensitivity {0:e}")]
    FrobeniusOrder(f64),
    #[error("pole model rejected: Laurent fit residual {0:e}")]
    PoleModelRejected(f64),
    #[error("holomorphic extension failed: residual {0:e}")]
    HolomorphicExtension(f64),
    #[error("derivative unstable: {0}")]
    DerivativeUnstable(String),
    #[error("ill-conditioned finite-part fit: condition number {0:e}")]
    IllConditionedFit(f64),
    #[error("collar exhausted: {0}")]
    CollarExhausted(String),
    #[error("step-size failure: {0}")]
    StepSize(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Invalid(e.to_string())
    }
}
