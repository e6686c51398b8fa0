use thiserror::Error;

/// Errors produced by the library.
///
/// The variants group failures by what the caller can do about them:
/// [`Error::InvalidArgument`] and [`Error::Shape`] indicate a caller bug or a
/// bad configuration, [`Error::Data`] indicates unusable input files, and
/// [`Error::Numerical`] / [`Error::NotConverged`] indicate that a computation
/// could not produce trustworthy numbers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input data could not be parsed or fails a dataset invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced non-finite values or is otherwise numerically
    /// unusable.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative solver hit its iteration limit before reaching the
    /// requested tolerance, in a context where a converged solution is
    /// required.
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
