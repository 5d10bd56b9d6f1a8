use thiserror::Error;

/// Errors raised by the controller library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("basis index {index} out of range for degree {degree} and {knots} knots")]
    BasisIndexOutOfRange { index: usize, degree: usize, knots: usize },

    #[error("parameter {value} outside knot range [{lo}, {hi}]")]
    ParameterOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("size mismatch: expected {expected}, got {got} ({what})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("objective is not finite at the initial guess")]
    NonFiniteObjective,

    #[error("empty log")]
    EmptyLog,

    #[error("baseline navigation time is {0}; cannot compute a relative increase")]
    InvalidBaseline(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
