use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numeric core.
///
/// Non-finite values abort with the name of the offending term or parameter
/// block rather than being clamped; silent clamping hides optimizer bugs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Grid/tensor dimensions disagree with what the operation requires.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A shape with zero elements where data is required.
    EmptyShape,
    /// A scalar argument outside its domain.
    InvalidArg {
        name: &'static str,
        why: &'static str,
    },
    /// A NaN/Inf appeared; `what` names the term or parameter block.
    NonFinite { what: String },
    /// A NaN/Inf at a known flat offset (mapped to a block name by callers
    /// that own the parameter layout).
    NonFiniteAt { what: &'static str, index: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { expected, got } => {
                write!(
                    f,
                    "shape mismatch: expected {}x{}, got {}x{}",
                    expected.0, expected.1, got.0, got.1
                )
            }
            CoreError::EmptyShape => write!(f, "zero-sized shape"),
            CoreError::InvalidArg { name, why } => write!(f, "invalid argument `{name}`: {why}"),
            CoreError::NonFinite { what } => write!(f, "non-finite value in {what}"),
            CoreError::NonFiniteAt { what, index } => {
                write!(f, "non-finite value in {what} at flat index {index}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
