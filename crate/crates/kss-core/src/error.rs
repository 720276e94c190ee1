use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KssError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("symmetry violation: {0}")]
    Symmetry(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureRefinement(String),
}

pub type Result<T> = std::result::Result<T, KssError>;

pub(crate) fn invalid(msg: impl Into<String>) -> KssError {
    KssError::InvalidParameter(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> KssError {
    KssError::Precondition(msg.into())
}
