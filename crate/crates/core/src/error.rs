use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid mode multi-index {0:?}")]
    InvalidMode([usize; 2]),

    #[error("norm exponent must be >= 1, got {0}")]
    InvalidExponent(f64),

    #[error("noise amplitude must be non-negative, got {0}")]
    NegativeAmplitude(f64),

    #[error("regularization parameter must lie in (0, 1], got {0}")]
    InvalidLambda(f64),

    #[error("step index {index} out of range (path has {steps} steps)")]
    StepOutOfRange { index: usize, steps: usize },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityGuard { dt: f64, bound: f64 },

    #[error("invalid solver parameters: {0}")]
    InvalidParams(&'static str),

    #[error("too few Monte Carlo samples: {0}")]
    TooFewSamples(usize),

    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}
