use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("block index {index} out of range for {l_bits}-bit sections")]
    IndexRange { index: usize, l_bits: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("degenerate state: {0}")]
    Degenerate(&'static str),
    #[error("covariance decomposition failed: {0}")]
    Decomposition(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
