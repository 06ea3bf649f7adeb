use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty reduction")]
    EmptyReduction,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("instance too large to enumerate: {0} binary variables (limit {1})")]
    InstanceTooLarge(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("coupling must be symmetric")]
    AsymmetricCoupling,
    #[error("invalid token id {0} (vocab size {1})")]
    InvalidToken(usize, usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Msg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
