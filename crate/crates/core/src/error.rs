use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range 0..{bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    /// Malformed container bytes; `offset` is where decoding stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    /// Caller violated an API contract, e.g. asked for a gradient of a
    /// non-scalar output.
    #[error("contract violated: {0}")]
    Contract(String),

    /// A backward rule produced an adjoint of the wrong shape.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFinite { iteration: u64, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::dim(op, format!("lhs {lhs:?} vs rhs {rhs:?}"))
    }
}
