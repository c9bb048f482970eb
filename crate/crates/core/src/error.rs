use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("cache alignment error: {0}")]
    CacheAlignment(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("arity error: expected {expected} ratios, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("search error: {0}")]
    Search(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("protocol error on rank {rank}: {detail}")]
    Protocol { rank: usize, detail: String },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("oracle budget exceeded: {candidates} candidates > budget {budget}")]
    Budget { candidates: u128, budget: u128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
