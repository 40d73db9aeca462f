use thiserror::Error;

use crate::expr::ParseError;
use crate::integrate::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("problem file: {0}")]
    Spec(String),

    #[error("step failed at index {index} (t = {t}): {reason}")]
    StepFailure {
        index: usize,
        t: f64,
        reason: String,
        partial: Option<Box<Trajectory>>,
    },

    #[error("step size underflow at t = {t}: the problem is too stiff for the requested tolerance")]
    StiffnessPathology { t: f64 },

    #[error("query t = {t} lies outside [0, {t_end}]")]
    OutOfRange { t: f64, t_end: f64 },

    #[error("unsolvable BVP: Q is numerically singular (condition estimate {condition:e})")]
    UnsolvableBvp { condition: f64 },

    #[error("Newton iteration stagnated with residual {residual:e}")]
    NewtonStagnation { residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("continuation stalled at {param} = {reached} ({completed} values solved): {reason}")]
    ContinuationStall {
        param: String,
        reached: f64,
        completed: usize,
        reason: String,
    },

    #[error("unknown case '{name}'; available: {}", available.join(", "))]
    UnknownCase { name: String, available: Vec<String> },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("golden mismatch: {0}")]
    Golden(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
