use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numerical error: {message} (residual {residual:.3e})")]
    Numerical { message: String, residual: f64 },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined fit: {0}")]
    UndefinedFit(String),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            residual,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
