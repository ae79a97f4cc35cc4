use std::fmt;
use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Two objects that must agree on a dimension do not.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A numeric input or result is NaN or infinite.
    NonFinite { context: &'static str },
    /// A parameter is outside its admissible range.
    InvalidArgument(String),
    /// A least-squares submatrix is (numerically) rank deficient.
    RankDeficient { support: Vec<usize> },
    /// A support enumeration would exceed the combinatorial guard.
    CombinatorialGuard { combinations: f64, limit: f64 },
    /// An input table row could not be parsed.
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    /// An operation produced or received an empty collection where one is required.
    EmptyInput(&'static str),
    Io { path: PathBuf, source: std::io::Error },
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { context, expected, found } => {
                write!(f, "{context}: dimension mismatch (expected {expected}, found {found})")
            }
            Error::NonFinite { context } => write!(f, "{context}: non-finite value"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::RankDeficient { support } => {
                write!(f, "rank-deficient submatrix on support {support:?}")
            }
            Error::CombinatorialGuard { combinations, limit } => {
                write!(f, "support enumeration too large ({combinations:.3e} > guard {limit:.0e})")
            }
            Error::MalformedRow { path, row, reason } => {
                write!(f, "{}: row {row}: {reason}", path.display())
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, found })
    }
}
