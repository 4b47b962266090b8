use thiserror::Error;

/// Errors raised by the knockoff pipeline.
///
/// Variants are split into input validation problems and numerical failures;
/// the CLI maps them to exit codes 1 and 2 respectively.
#[derive(Debug, Error)]
pub enum KnockoffError {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("infeasible knockoff covariance: minimum eigenvalue of 2D - D*Theta*D is {min_eig:e}")]
    InfeasibleCovariance { min_eig: f64 },

    #[error("no feasible diagonal found after {halvings} halvings")]
    BacktrackingExhausted { halvings: usize },

    #[error("non-finite log-density at observation {row}, feature {feature}")]
    NonFiniteLogDensity { row: usize, feature: usize },

    #[error("unidentifiable configuration: {0}")]
    Unidentifiable(String),

    #[error("zero residual variance in nodewise regression for feature {0}")]
    ZeroResidualVariance(usize),

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<KnockoffError>,
    },
}

impl KnockoffError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            KnockoffError::NotPositiveDefinite(_)
            | KnockoffError::InfeasibleCovariance { .. }
            | KnockoffError::BacktrackingExhausted { .. }
            | KnockoffError::NonFiniteLogDensity { .. }
            | KnockoffError::Unidentifiable(_)
            | KnockoffError::ZeroResidualVariance(_) => true,
            KnockoffError::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn in_replicate(self, index: usize) -> Self {
        KnockoffError::Replicate { index, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, KnockoffError>;
