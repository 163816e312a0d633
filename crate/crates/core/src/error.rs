//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by scenario validation, model evaluation, and search.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or parameter field violates its invariant.
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    /// A SU or channel index is outside the configured ranges.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// An argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An exact enumeration would exceed the configured budget. The Monte
    /// Carlo simulator handles instances of this size.
    #[error(
        "enumeration budget exceeded: {what} count {count} exceeds cap {cap}; \
         use the simulator for instances of this size"
    )]
    BudgetExceeded {
        what: &'static str,
        count: u128,
        cap: u128,
    },

    /// A detection-probability constraint cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Scenario file could not be read.
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),

    /// Scenario file could not be parsed.
    #[error("failed to parse scenario file: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn field(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
