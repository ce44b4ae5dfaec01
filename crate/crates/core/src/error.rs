use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is rank deficient (smallest singular value {smallest:e}, threshold {threshold:e})")]
    RankDeficient { smallest: f64, threshold: f64 },

    #[error("columns are not orthonormal (defect {defect:e} > {tol:e})")]
    NotOrthonormal { defect: f64, tol: f64 },

    #[error("determinant {0} is not positive")]
    NonPositiveDeterminant(f64),

    #[error("matrix is not upper triangular with positive diagonal")]
    NotUpperTriPos,

    #[error("R of agent {agent} is singular (diagonal ratio {ratio:e})")]
    SingularR { agent: usize, ratio: f64 },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("left null space of the Laplacian has dimension {0}, expected 1")]
    NullSpaceDimension(usize),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
