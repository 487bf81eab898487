use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet must contain at least two symbols (got {0})")]
    EmptyAlphabet(usize),

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("reference probability at symbol {index} is not strictly positive ({value})")]
    NonPositiveReference { index: usize, value: f64 },

    #[error("reference distribution sums to {sum}, not 1")]
    NotNormalized { sum: f64 },

    #[error("constraint row {row} is a linear combination of other rows but its target moment disagrees")]
    InconsistentConstraints { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("target moments lie outside the convex hull of the feature vectors")]
    NotInHull,

    #[error("target moments lie on the boundary of the convex hull; the projection would have zero entries")]
    BoundaryAlpha,

    #[error("dual Newton did not converge in {iterations} iterations (gradient norm {gradient_norm:e})")]
    MaxIterations { iterations: usize, gradient_norm: f64 },

    #[error("moment covariance is singular at the current multiplier")]
    SingularHessian,

    #[error("probability at symbol {index} is zero")]
    ZeroProbability { index: usize },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("support mismatch: Q is zero at symbol {index} where P is positive")]
    SupportMismatch { index: usize },

    #[error("symbol {symbol} is outside the alphabet 1..={k}")]
    SymbolOutOfRange { symbol: usize, k: usize },

    #[error("enumeration of {count} items exceeds the guard of {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("no empirical type satisfies the constraints at tolerance {tau}; smallest admissible tolerance is {min_tau}")]
    EmptyFeasibleSet { tau: f64, min_tau: f64 },

    #[error("cannot draw {m} items without replacement from {n}")]
    DrawsExceedPopulation { m: usize, n: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("the Lanford window contains no feasible type")]
    EmptyWindow,

    #[error("tangent dimension {0} is too large for grid quadrature (max 3)")]
    QuadratureDimension(usize),

    #[error("moment pushforward is singular along direction {null_direction:?}")]
    SingularPushforward { null_direction: Vec<f64> },

    #[error("parameter grid is empty")]
    EmptyGrid,

    #[error("at grid point {index}: {source}")]
    AtGridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
