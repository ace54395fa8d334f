use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("problem failed validation with {} violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),

    #[error("{what} out of range: {value} (allowed {min}..={max})")]
    Domain {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    /// The conditioning event has probability zero.
    #[error("unreachable observation at time {t}")]
    Unreachable { t: usize },

    #[error("off-design history at time {t}: {reason}")]
    OffDesign { t: usize, reason: String },

    #[error("budget exceeded: {what} needs {count}, limit is {limit}")]
    Budget {
        what: &'static str,
        count: u128,
        limit: u128,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn budget(what: &'static str, count: u128, limit: u128) -> Self {
        Error::Budget { what, count, limit }
    }

    pub(crate) fn domain(what: &'static str, value: usize, min: usize, max: usize) -> Self {
        Error::Domain {
            what,
            value,
            min,
            max,
        }
    }
}
