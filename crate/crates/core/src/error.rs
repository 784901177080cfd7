use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix that must be well conditioned (or finite) was not.
    #[error("numerical failure in {matrix}: {detail}")]
    Numerical { matrix: String, detail: String },

    /// Integration produced non-finite values.
    #[error("numerical blow-up at integration step {step}")]
    Blowup { step: usize },

    /// The smoothed inflation factor became non-positive.
    #[error(
        "inflation factor became non-positive ({lambda}); error covariances are misspecified \
         or the smoothing weight is too large"
    )]
    Misspecification { lambda: f64 },

    #[error("filter diverged at cycle {cycle}")]
    Divergence { cycle: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// Failure while folding model `model` (zero-based) into the combined estimate.
    #[error("while combining model {model}: {source}")]
    Combination {
        model: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(matrix: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            matrix: matrix.into(),
            detail: detail.into(),
        }
    }

    pub fn in_model(self, model: usize) -> Self {
        Error::Combination {
            model,
            source: Box::new(self),
        }
    }

    /// Strips [`Error::Combination`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Combination { source, .. } => source.root(),
            e => e,
        }
    }
}
