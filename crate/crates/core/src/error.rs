use crate::expr::{EvalError, ParseError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("trajectory left the chart guard at time {time} (point {point:?})")]
    Escaped { time: f64, point: Vec<f64> },
    #[error("step size underflow at time {time}; the field is likely stiff or singular")]
    StepUnderflow { time: f64 },
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("Newton iteration did not converge (residual {0:e})")]
    Newton(f64),
    #[error("quadrature did not converge: change {change:e} at {nodes} nodes")]
    Quadrature { change: f64, nodes: usize },
    #[error("frame transport did not converge: {0}")]
    Transport(String),
    #[error("singular linear system")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
