use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    /// A dimension is zero or otherwise unusable.
    #[error("{op}: invalid dimension: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Input failed a precondition check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// The model configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An API contract was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),

    /// The optimizer saw a non-finite gradient.
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    /// A parameter was missing or had the wrong shape.
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
