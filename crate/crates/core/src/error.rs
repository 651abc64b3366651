use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("target law is not attainable: {0}")]
    Unattainable(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numeric(_))
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidDistribution(_) => "invalid-distribution",
            Error::InvalidRule(_) => "invalid-rule",
            Error::Unattainable(_) => "unattainable",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
        }
    }

    /// The message without the variant prefix.
    pub fn reason(&self) -> &str {
        match self {
            Error::Domain(s)
            | Error::Unsupported(s)
            | Error::InvalidDistribution(s)
            | Error::InvalidRule(s)
            | Error::Unattainable(s)
            | Error::Numeric(s)
            | Error::Config(s) => s,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
