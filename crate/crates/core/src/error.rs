use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A simulation produced no usable output (e.g. a trade-free session).
    #[error("degenerate simulation: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        {
            // Bound first so NaN comparisons fail the check.
            let holds: bool = $cond;
            if !holds {
                return Err($crate::error::Error::Validation(format!($($arg)+)));
            }
        }
    };
}
pub(crate) use ensure;
