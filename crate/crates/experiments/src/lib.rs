//! Scenario layer for trussbot: initial designs, the fixed baseline, the
//! ablation matrix, scenario runs with their artifacts, and SVG frames.

pub mod ablation;
pub mod baseline;
pub mod config;
pub mod heuristics;
pub mod metrics;
pub mod render;
pub mod scenario;

pub use config::{config_schema, ScenarioConfig};
pub use scenario::{run_scenario, run_trials, RunArtifacts};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] trussbot::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

impl ExperimentError {
    /// 2 for bad input, 3 when the simulation or optimizer blew up, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use trussbot::Error as E;
        match self {
            ExperimentError::Config(_) | ExperimentError::Core(E::InvalidArgument(_)) => EXIT_INVALID_CONFIG,
            ExperimentError::Core(
                E::Diverged { .. } | E::DegenerateGeometry { .. } | E::NonFiniteGradient { .. } | E::Aborted { .. },
            ) => EXIT_DIVERGED,
            _ => 1,
        }
    }
}
