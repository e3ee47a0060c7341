use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is not a member of the body: {0}")]
    NotInBody(String),

    #[error("support vector requested at an interior or exterior point (distance {distance:e})")]
    NotOnBoundary { distance: f64 },

    #[error("non-finite iterate at step {step}")]
    Divergence { step: usize },

    #[error("sampled subgradient norm {norm} exceeds bound {bound} at step {step}")]
    GradBoundViolation { step: usize, norm: f64, bound: f64 },

    #[error("missing trace data: {0}")]
    MissingData(&'static str),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
