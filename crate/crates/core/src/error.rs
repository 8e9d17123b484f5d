use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a precondition of an operation.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A file does not follow the container layout it claims.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file whose encoding we refuse to handle.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Double differentiation reached a primitive without a second-order rule.
    #[error("primitive `{0}` has no second-order rule; cannot build an input-gradient graph through it")]
    Capability(&'static str),

    #[error("out-of-vocabulary words: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
