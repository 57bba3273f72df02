use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cohort")]
    EmptyCohort,
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("no events")]
    NoEvents,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("uncensored case only: member {0} is censored")]
    UncensoredOnly(String),
    #[error("degenerate bound: expected C-index {0} is not above 0.5")]
    DegenerateBound(f64),
    #[error("collinear predictors")]
    CollinearPredictors,
    #[error("cox fit did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by user-supplied data or configuration rather
    /// than a failed computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::EmptyCohort
            | Error::DuplicateId(_)
            | Error::Validation(_)
            | Error::InvalidArgument(_)
            | Error::Csv { .. }
            | Error::Json(_) => true,
            Error::Replicate { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
