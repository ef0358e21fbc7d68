use thiserror::Error;

/// Errors raised by the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported derivative order {order} for {family} kernel")]
    UnsupportedOrder { order: usize, family: &'static str },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("ill-conditioned system: pivot {pivot:e} at row {row}")]
    Conditioning { pivot: f64, row: usize },

    #[error("non-finite state at t = {time}")]
    BlowUp { time: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("closure constraint not satisfied: residual {residual:e}")]
    Constraint { residual: f64 },

    #[error("eigenvalue solver failed: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}
