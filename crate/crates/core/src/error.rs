//! Crate-wide error type.

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the numeric core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Array arguments whose dimensions do not match the operation's contract.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// Non-finite values or numerically impossible requests.
    #[error("numerical error in {context}{}", fmt_index(.index))]
    Numeric {
        context: String,
        /// Flat index of the first offending entry, when one exists.
        index: Option<usize>,
    },

    /// Matrix factorization failures that survived the jitter retries.
    #[error("linear algebra failure: {0}")]
    Linalg(String),

    /// Caller-supplied arguments that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Malformed input data; `line` is 1-based and counts the header.
    #[error("data error{}: {context}", fmt_line(.line))]
    Data { context: String, line: Option<u64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn numeric(context: impl Into<String>, index: Option<usize>) -> Self {
        Error::Numeric {
            context: context.into(),
            index,
        }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::Invalid(context.into())
    }

    pub fn data(context: impl Into<String>, line: Option<u64>) -> Self {
        Error::Data {
            context: context.into(),
            line,
        }
    }
}

fn fmt_index(index: &Option<usize>) -> String {
    match index {
        Some(i) => format!(" (first offending index {i})"),
        None => String::new(),
    }
}

fn fmt_line(line: &Option<u64>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}
