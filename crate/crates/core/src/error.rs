use thiserror::Error;

/// Errors raised by the linear-algebra substrate and the filters built on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("{context}: matrix is {rows}x{cols}, expected square")]
    NotSquare {
        context: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{context}: non-finite entry")]
    NonFinite { context: &'static str },

    /// A block of a saddle-point matrix (or its Schur complement) failed the invertibility test.
    #[error("singular {block} block (condition estimate {condition:e})")]
    SingularBlock { block: &'static str, condition: f64 },

    #[error("innovation covariance is singular (condition estimate {condition:e})")]
    SingularInnovationCovariance { condition: f64 },

    #[error("augmented innovation covariance is singular")]
    SingularAugmentedInnovation,

    #[error("{context}: covariance is singular")]
    SingularCovariance { context: &'static str },

    #[error("constraint Gram matrix is singular (condition estimate {condition:e})")]
    SingularConstraintGram { condition: f64 },

    #[error("projection weight is not symmetric positive definite")]
    SingularWeight,

    #[error("constraint matrix has rank {rank}, expected full row rank {rows}")]
    RankDeficientConstraint { rank: usize, rows: usize },

    #[error("constraint jacobian has rank {rank}, expected full row rank {rows}")]
    RankDeficientJacobian { rank: usize, rows: usize },

    /// The weighted residual norm of the innovation vanished, so the restricted-gain
    /// Lagrange system has no unique solution.
    #[error("innovation is degenerate (weighted norm {weighted_norm:e})")]
    DegenerateResidual { weighted_norm: f64 },

    #[error("dense KKT system is singular")]
    SingularKkt,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
