use thiserror::Error;

/// Errors shared across the solver, belief, agent and lab layers.
#[derive(Debug, Error)]
pub enum Error {
    /// The linear system for a chain quantity is rank-deficient beyond the
    /// one expected null direction, i.e. the induced chain is reducible.
    #[error("induced chain is singular/reducible")]
    SingularChain,

    /// An iterative solver exceeded its sweep budget.
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    /// The target state absorbs no probability mass from the source.
    #[error("state {target} is unreachable from {origin}")]
    Unreachable { origin: usize, target: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("time index {t} is not strictly increasing (last was {last})")]
    NonMonotoneTime { t: u64, last: u64 },

    #[error("non-positive average return {0}")]
    NonPositiveReturn(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("support violation: q(a|s)=0 where p(a|s)>0 at s={s}, a={a}")]
    SupportViolation { s: usize, a: usize },

    #[error("environment construction failed after {0} attempts")]
    ConstructionFailed(usize),

    #[error("need at least {need} horizon points, got {got}")]
    InsufficientPoints { need: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
