use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of {width}x{height} is too small for a four-rooms layout (need at least 5x5)")]
    InvalidGeometry { width: usize, height: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("state {0} is terminal")]
    TerminalState(usize),

    #[error("option set assigns zero probability to the observed action before step {step}")]
    DegenerateSupport { step: usize },

    #[error("transition at step {step} has zero probability under the transition model")]
    ZeroProbabilityTransition { step: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("objective evaluated to a non-finite value ({0})")]
    NonFiniteObjective(f64),

    #[error("enumeration needs {terms} terms, budget is {budget}")]
    BudgetExceeded { terms: u64, budget: u64 },

    #[error("greedy policy failed to reach the goal in {attempts} attempts")]
    PolicyNotPerformant { attempts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
