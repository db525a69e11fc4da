use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Parameters fall outside the natural / expectation domain of the family.
    #[error("domain error: {0}")]
    Domain(String),

    /// The domain guard ran out of step halvings.
    #[error("step failure: update left the parameter domain after {halvings} halvings")]
    StepFailure { halvings: u32 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty minibatch")]
    EmptyBatch,

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
