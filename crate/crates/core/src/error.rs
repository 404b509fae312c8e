use thiserror::Error;

/// Errors produced by the trip prediction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid trip {trip_id}: {message}")]
    InvalidTrip { trip_id: String, message: String },

    #[error("duplicate trip id {0}")]
    DuplicateTrip(String),

    #[error("history is empty")]
    EmptyHistory,

    #[error("invalid cluster set: {0}")]
    InvalidClusters(String),

    #[error("mixed origin/destination labels: {labeled} trips labeled, {unlabeled} unlabeled")]
    MixedLabels { labeled: usize, unlabeled: usize },

    #[error("state {state} out of range (N = {n_states}, unseen = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("maximum-likelihood initial probabilities need at least one trip in cluster {0}")]
    EmptyClusterMl(String),

    #[error("posterior undefined: every cluster has zero probability")]
    UndefinedPosterior,

    #[error("session already decided; no further observations accepted")]
    AlreadyDecided,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
