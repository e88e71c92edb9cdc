use thiserror::Error;

use crate::engine::RunStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("population budget of {limit} particles exceeded")]
    PopulationOverflow { limit: usize, partial: Box<RunStats> },

    #[error("time {0} is not on the snapshot schedule")]
    UnscheduledSnapshot(f64),

    #[error("functional `{functional}` is not finite at particle {particle} (argument {argument})")]
    NonFiniteFunctional {
        functional: String,
        particle: u64,
        argument: f64,
    },

    #[error("functional `{0}` is not integrable against the Bessel-3 law: {1}")]
    NotIntegrable(String, String),

    #[error("functional `{0}` does not provide a derivative")]
    MissingDerivative(String),

    #[error("unknown functional key `{0}`")]
    UnknownFunctional(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("barrier mismatch: {0}")]
    BarrierMismatch(String),

    #[error("run has no lineage tags; evolve with descendants continued to evaluate contributions")]
    MissingLineageTags,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("statistic mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("all {0} replicates failed")]
    AllReplicatesFailed(usize),

    #[error("resource error: {0}")]
    Resource(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
