use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("point {0} outside the unit interval")]
    PointOutOfDomain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("element lives in {got} but {expected} was required")]
    SpaceMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("scale exponents must satisfy t < r < s (got t={t}, r={r}, s={s})")]
    ScaleOrdering { t: f64, r: f64, s: f64 },

    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("smoothness q={q} outside [1, 2+p] for p={p}")]
    SmoothnessOutOfRange { q: f64, p: f64 },

    #[error("bisection bracket failure: {0}")]
    Bracket(String),

    #[error("degenerate lambda grid: {0}")]
    DegenerateGrid(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("linear system ill-conditioned: estimated condition {condition:e} exceeds {limit:e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("quadrature did not converge (estimate {estimate:e}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("domain ball violated: distance {distance} exceeds radius {radius}")]
    DomainBall { distance: f64, radius: f64 },

    #[error("zero direction rejected")]
    ZeroDirection,

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
