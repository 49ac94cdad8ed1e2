use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad parameter blob: {0}")]
    Format(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}
