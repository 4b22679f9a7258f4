use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("adaptive quadrature did not converge on [{lower}, {upper}] (error estimate {error:e})")]
    QuadratureFailure { lower: f64, upper: f64, error: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("pool size must be at least 1")]
    InvalidPoolSize,

    #[error("pool `{0}` is missing from one of the input tables")]
    OrphanPool(String),

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("local system at x = {x} is singular (reciprocal condition {rcond:e})")]
    SingularLocalSystem { x: f64, rcond: f64 },

    #[error("no bandwidth in the candidate grid produced a valid criterion")]
    NoValidBandwidth,

    #[error("moment matrix is singular")]
    SingularMomentMatrix,

    #[error("moment of order {order} does not exist on an unbounded support")]
    DivergentMoment { order: usize },

    #[error("kernel {0} is not supported here (compact support required)")]
    UnsupportedKernel(&'static str),

    #[error("curve has {missing} failed fit(s); ISE is undefined")]
    IncompleteCurve { missing: usize },

    #[error("need at least {needed} valid records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::QuadratureFailure { .. }
                | Error::SingularLocalSystem { .. }
                | Error::NoValidBandwidth
                | Error::SingularMomentMatrix
                | Error::DivergentMoment { .. }
                | Error::IncompleteCurve { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse(e.to_string()),
        }
    }
}
