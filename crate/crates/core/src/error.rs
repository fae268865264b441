use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are grouped into the categories the CLI maps onto exit codes
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("model file {path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step size underflow at t = {time:.6e} (h = {step:.3e}); {hint}")]
    StepUnderflow { time: f64, step: f64, hint: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("time {time} outside the valid window [{lo}, {hi}]")]
    OutOfWindow { time: f64, lo: f64, hi: f64 },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: usage=2, model=3, numeric=4, budget=5.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Parse { .. } | Error::InvalidModel(_) | Error::Precondition(_) | Error::Io { .. } => 3,
            Error::StepUnderflow { .. } | Error::Numeric(_) | Error::OutOfWindow { .. } => 4,
            Error::Budget(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
