use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("mode index {index} out of range for a {order}-way tensor")]
    ModeIndex { index: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("operation requires a {expected} model, got {found}")]
    Kind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("boundary violation: {0}")]
    Boundary(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("canonical form violated: {0}")]
    CanonicalForm(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
