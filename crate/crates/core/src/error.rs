use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible with the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An argument is outside the operation's domain (non-finite weights,
    /// unsupported kernel size, empty target size, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A network or training configuration violates its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// A forward op produced NaN/Inf from finite inputs, or the loss diverged.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
