use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular model: {0}")]
    SingularModel(String),

    /// The Kronecker Gram matrix of the generator regression could not be
    /// factorized even after jitter.
    #[error("generator regression is not identifiable: {0}")]
    Identifiability(String),

    #[error("problem too large for dense oracle: {size} > {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {0} model-selection runs failed to converge")]
    NoConvergedRun(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
