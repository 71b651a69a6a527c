//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, FridaError>;

/// Errors emitted by the numeric kernel, the models, and the episode loop.
#[derive(Debug, Clone, PartialEq)]
pub enum FridaError {
    /// Tensor or layer dimensions do not line up.
    Shape {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A computation produced or received a non-finite value.
    NonFinite { context: &'static str },
    /// A domain time stamp does not fit in the configured code width.
    Capacity { tau: usize, width: usize },
    /// An index is out of range.
    Index {
        context: &'static str,
        index: usize,
        bound: usize,
    },
    /// A caller violated an operation's contract.
    Contract(String),
    /// A generation or configuration spec cannot be satisfied.
    Spec(String),
    /// Text input failed to parse. `line` is 1-based.
    Parse { line: usize, message: String },
    /// A serialized payload is malformed, truncated, or version-mismatched.
    Format(String),
    /// A required matrix entry is absent.
    UndefinedEntry { time: usize, domain: usize },
}

impl fmt::Display for FridaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FridaError::Shape {
                context,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            FridaError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            FridaError::Capacity { tau, width } => write!(
                f,
                "domain code capacity exceeded: tau={tau} needs more than {width} bits; \
                 configure a larger code width"
            ),
            FridaError::Index {
                context,
                index,
                bound,
            } => {
                write!(f, "index {index} out of range (< {bound}) in {context}")
            }
            FridaError::Contract(msg) => write!(f, "contract violation: {msg}"),
            FridaError::Spec(msg) => write!(f, "spec error: {msg}"),
            FridaError::Parse { line, message } => {
                write!(f, "parse error at line {line}: {message}")
            }
            FridaError::Format(msg) => write!(f, "format error: {msg}"),
            FridaError::UndefinedEntry { time, domain } => {
                write!(
                    f,
                    "accuracy entry undefined at time {time} for domain {domain}"
                )
            }
        }
    }
}

impl core::error::Error for FridaError {}
