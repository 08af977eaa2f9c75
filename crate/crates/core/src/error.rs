use thiserror::Error;

/// Errors raised by model construction, the analytic solvers and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rate `{name}` must be a positive finite number, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },

    #[error("capacity must be at least 2, got {0}")]
    CapacityTooSmall(usize),

    #[error("state index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("block U_{level} is numerically singular (condition estimate {condition:e})")]
    SingularBlock { level: usize, condition: f64 },

    #[error("truncated linear system is singular at state {0}")]
    SingularSystem(usize),

    #[error("no convergence below the level ceiling {ceiling}")]
    NoConvergence { ceiling: usize },

    #[error("sojourn mean does not stabilize (last two estimates {previous} and {current})")]
    DivergentMean { previous: f64, current: f64 },

    #[error("invalid time grid: {0}")]
    GridError(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
