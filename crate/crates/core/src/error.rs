use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed team structure {0:?}: expected \"<teams>/<size>\" with positive integers")]
    MalformedStructure(String),

    #[error("team structure {notation} covers {covered} agents but the population has {n_agents}")]
    StructureMismatch {
        notation: String,
        covered: usize,
        n_agents: usize,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("agent {agent} out of range for a population of {n_agents}")]
    AgentOutOfRange { agent: usize, n_agents: usize },

    #[error("reward vector has length {got}, expected {expected}")]
    RewardLength { got: usize, expected: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("payoff parameters must satisfy b > c > 0 (got b = {b}, c = {c})")]
    PayoffDomain { b: f64, c: f64 },

    #[error("uniform matching needs an even population, got {0}")]
    OddPopulation(usize),

    #[error("expected {expected} actions, got {got}")]
    ActionCount { got: usize, expected: usize },

    #[error("episode already finished at timestep {0}")]
    EpisodeFinished(usize),

    #[error("input has length {got}, network expects {expected}")]
    ShapeMismatch { got: usize, expected: usize },

    #[error("empty rollout")]
    EmptyRollout,

    #[error("{0}")]
    Config(String),

    #[error("map layout: {0}")]
    Layout(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("missing column {column:?} in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (structure strings, config
    /// values, layouts) rather than by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedStructure(_)
                | Error::StructureMismatch { .. }
                | Error::InvalidPartition(_)
                | Error::PayoffDomain { .. }
                | Error::OddPopulation(_)
                | Error::Config(_)
                | Error::Layout(_)
        )
    }
}
