use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not positive definite (pivot {pivot:.6e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asym:.6e})")]
    NotSymmetric { max_asym: f64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The quadratic structure does not act on the supplied truth
    /// (`|J~ beta|` is zero), so the structure-driven mu rule is undefined
    /// and the caller has to pick mu some other way.
    #[error("structure norm is zero: the quadratic penalty does not constrain this vector, mu is undefined")]
    UnpenalizedStructure,

    #[error("sign-pattern enumeration certified no optimum (degenerate ties)")]
    Degenerate,

    #[error("csv parse error on line {line}: {message}")]
    CsvParse { line: usize, message: String },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
