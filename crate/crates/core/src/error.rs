use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// NaN or infinite value where a finite one is required.
    Numeric(String),
    /// A caller broke a documented precondition.
    Contract(String),
    /// Disease name missing from the rule table.
    UnknownDisease(String),
    /// Input data failed validation.
    Validation(String),
    /// External dialogue generator failed.
    Generator(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::UnknownDisease(name) => write!(f, "no description rule for disease {name:?}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Generator(msg) => write!(f, "dialogue generator failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
