use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine failed, or a state went non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The selected beam produces no antidamping, so no Hopf threshold exists.
    #[error("no threshold: {0}")]
    NoThreshold(String),

    /// Measured data never crosses the oscillation threshold.
    #[error("not above threshold: {0}")]
    BelowThreshold(String),

    /// Invalid configuration (simulation, demodulation or fit settings).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is unusable (too short, negative PSD, non-stationary, ...).
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// The same error with `stage` prefixed to its message.
    pub fn context(self, stage: &str) -> Self {
        match self {
            Error::Domain(m) => Error::Domain(format!("{stage}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
            Error::NoThreshold(m) => Error::NoThreshold(format!("{stage}: {m}")),
            Error::BelowThreshold(m) => Error::BelowThreshold(format!("{stage}: {m}")),
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Data(m) => Error::Data(format!("{stage}: {m}")),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
