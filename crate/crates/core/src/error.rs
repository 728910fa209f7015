use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry at step {step}: edge {edge} has length {length:e}")]
    DegenerateGeometry { step: usize, edge: usize, length: f64 },

    #[error("simulation diverged at step {step} (max |v| = {max_speed:e})")]
    Diverged { step: usize, max_speed: f64 },

    #[error("non-finite {what} gradient")]
    NonFiniteGradient { what: &'static str },

    #[error("optimization aborted after {count} consecutive divergences (last at iteration {iter}): {reason}")]
    Aborted { iter: usize, count: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
