use thiserror::Error;

use crate::metric::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x1}, {x2}) lies outside the domain")]
    Domain { x1: f64, x2: f64 },

    #[error("geodesic still inside the domain after {steps} steps")]
    Trapped {
        steps: usize,
        partial: Box<Trajectory>,
    },

    #[error("geodesic did not reach the boundary within length {max_length}")]
    NonTrapping { max_length: f64 },

    #[error("band overflow: degree {degree} outside [-{n_theta}, {n_theta}]")]
    BandOverflow { degree: i64, n_theta: usize },

    #[error("fields live on different discretizations")]
    MetricMismatch,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {})", .history.last().copied().unwrap_or(f64::NAN))]
    Solver {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("initial field is not solenoidal: relative residual {residual:e}")]
    NotSolenoidal { residual: f64 },

    #[error("conjugate point at t = {t}")]
    ConjugatePoint { t: f64 },

    #[error("ray fan was built for a different metric")]
    StaleFan,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
