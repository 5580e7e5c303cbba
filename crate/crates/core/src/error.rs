use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Kernel expression could not be parsed; `position` is a byte offset.
    Parse { position: usize, message: String },
    /// Adaptive quadrature stopped before meeting its tolerance.
    Quadrature { achieved: f64, requested: f64 },
    /// The series for the bivariate kernel was truncated too early.
    Truncation { bound: f64, tolerance: f64 },
    /// Implicit trapezoid step would produce a negative amplification factor.
    StepTooLarge { eta: f64, dt: f64 },
    /// Argument outside the documented domain of an operation.
    InvalidArgument(String),
    /// Shapes of two objects that must agree do not.
    Dimension { expected: usize, found: usize },
    /// A linear system had no unique solution.
    Singular { null_direction: alloc::vec::Vec<f64> },
    /// Zero isolation of an exponential polynomial did not terminate.
    RootIsolation { lo: f64, hi: f64 },
    /// Two computations that must agree did not.
    Mismatch { what: &'static str, discrepancy: f64, tolerance: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { position, message } => write!(f, "parse error at position {position}: {message}"),
            Error::Quadrature { achieved, requested } => {
                write!(f, "quadrature did not converge (error estimate {achieved:e}, requested {requested:e})")
            }
            Error::Truncation { bound, tolerance } => {
                write!(f, "series tail bound {bound:e} exceeds tolerance {tolerance:e}")
            }
            Error::StepTooLarge { eta, dt } => {
                write!(f, "time step {dt:e} too large for eigenvalue {eta:e} (eta*dt > 2)")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Dimension { expected, found } => write!(f, "dimension mismatch: expected {expected}, found {found}"),
            Error::Singular { null_direction } => {
                write!(f, "singular system; null direction has {} components", null_direction.len())
            }
            Error::RootIsolation { lo, hi } => write!(f, "could not resolve zero order in [{lo}, {hi}]"),
            Error::Mismatch { what, discrepancy, tolerance } => {
                write!(f, "{what}: discrepancy {discrepancy:e} above tolerance {tolerance:e}")
            }
        }
    }
}

pub(crate) fn invalid(msg: &str) -> Error {
    Error::InvalidArgument(String::from(msg))
}
