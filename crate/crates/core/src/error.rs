use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input shapes do not agree.
    DimensionMismatch { expected: usize, found: usize },
    /// A matrix operation that needs a square input got a rectangular one.
    NotSquare { rows: usize, cols: usize },
    /// NaN or infinite input.
    NonFinite(&'static str),
    /// A parameter is outside its documented range.
    InvalidParameter(String),
    /// The spectral-interval scan found no block with ratio at most 2.
    PigeonholeViolated { n: usize, block: usize },
    /// An iterative certificate did not close its gap in the allotted budget.
    ToleranceNotReached { lo: f64, hi: f64, iterations: usize },
    /// Enumeration would exceed the configured cap.
    EnumerationCap { count: u128, cap: u128 },
    /// The target body has no component from which a certified bound can be read.
    Uncertified(&'static str),
    /// A linear map is singular (or numerically so).
    Singular,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures of a numerical tolerance rather than of input validation.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ToleranceNotReached { .. } | Error::PigeonholeViolated { .. } | Error::Singular
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NotSquare { rows, cols } => write!(f, "matrix is {rows}x{cols}, expected square"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::PigeonholeViolated { n, block } => write!(
                f,
                "pigeonhole violated: no block of length {block} with ratio <= 2 among the top n/2 of {n} singular values"
            ),
            Error::ToleranceNotReached { lo, hi, iterations } => write!(
                f,
                "tolerance not reached after {iterations} iterations (best bracket [{lo:e}, {hi:e}])"
            ),
            Error::EnumerationCap { count, cap } => {
                write!(f, "enumeration of {count} items exceeds cap {cap}")
            }
            Error::Uncertified(what) => write!(f, "no certified bound available: {what}"),
            Error::Singular => write!(f, "singular linear map"),
        }
    }
}

impl core::error::Error for Error {}
