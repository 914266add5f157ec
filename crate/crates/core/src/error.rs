use thiserror::Error;

use crate::ssn::SsnTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A fidelity or cost was evaluated outside of its domain (e.g. log of a
    /// nonpositive intensity).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("semismooth Newton did not converge after {} iterations (last residual {:.3e})",
        .trace.iterations, .trace.residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { trace: Box<SsnTrace> },

    #[error("zero pivot in banded LU at row {row}")]
    SingularPivot { row: usize },

    #[error("variant mismatch: {0}")]
    VariantMismatch(&'static str),

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to usage or
    /// I/O problems). The CLI maps these to exit status 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::SingularPivot { .. } | Error::Domain(_)
        )
    }
}
