use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SphsError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        what: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{what} is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("{what} is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { what: &'static str, lambda_min: f64 },

    #[error("{what} is not skew-symmetric (|A + A^T| = {residual:e})")]
    NotSkew { what: &'static str, residual: f64 },

    #[error("{what}: eigenvalue {value} outside [{lower}, {upper}]")]
    EigenvalueOutOfBounds {
        what: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("improper transfer function: numerator degree {num_degree} exceeds denominator degree {den_degree}")]
    ImproperTransferFunction { num_degree: usize, den_degree: usize },

    #[error("transfer function: {0}")]
    InvalidTransferFunction(&'static str),

    #[error("phase undefined at origin")]
    PhaseUndefined,

    #[error("input matrix must be square and invertible")]
    SingularInputMatrix,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = SphsError> = std::result::Result<T, E>;
