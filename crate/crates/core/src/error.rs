use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vector length {0} is not a triangular number")]
    NotTriangular(usize),

    #[error("matrix is not positive definite (smallest Cholesky pivot {min_pivot:e})")]
    IllConditioned { min_pivot: f64 },

    #[error("zero is not inside the convex hull of the constraint rows")]
    NotInHull,

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    MaxIterations { iterations: usize, gradient_norm: f64 },

    #[error("constraint second-moment matrix is numerically singular (smallest eigenvalue {lambda_min:e})")]
    DegenerateConstraints { lambda_min: f64 },

    #[error("I - B is singular; the path pattern is not recursive")]
    SingularA,

    #[error("model is not locally identified (Jacobian rank {rank} < {q})")]
    NotLocallyIdentified { rank: usize, q: usize },

    #[error("every replication was skipped or the skip rate {skip_rate:.3} exceeded the limit")]
    StudyDegenerate { skip_rate: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
