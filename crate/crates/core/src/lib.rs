//! Tabular-MDP online-learning laboratory: average-reward solvers, Dirichlet
//! transition posteriors, posterior-weighted policy iteration, the
//! double-Thompson-sampling agent and its baselines, seeded environments,
//! and the experiment/bound-checking lab.

pub mod agents;
pub mod envs;
pub mod error;
pub mod lab;
mod linalg;
pub mod mdp;
pub mod posterior;
pub mod ppi;

pub use agents::{Agent, DtsAgent, EpisodeSchedule, EpochRecord, PosteriorMode};
pub use envs::Environment;
pub use error::{Error, Result};
pub use lab::{ExperimentConfig, RunRecord, RunSpec};
pub use mdp::{DeterministicPolicy, GainBiasSolution, StochasticPolicy, TabularMdp};
pub use posterior::{DirichletPosterior, PosteriorWeight, VisitCounters};
pub use ppi::{PpiConfig, PpiResult};
