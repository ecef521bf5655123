use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("demand type `{0}` has an empty pickup or dropoff neighborhood")]
    EmptyNeighborhood(String),
    #[error("buffers cannot hold all supply: sum of scaled buffers is {0}, need > 1")]
    BufferInfeasible(f64),
    #[error("demand distribution is not a probability vector: {0}")]
    NonProbabilityDemand(String),
    #[error("connectivity enumeration supports at most 20 nodes, got {0}")]
    TooManyNodes(usize),
    #[error("congestion function evaluated outside its domain at node {node}: {value}")]
    DomainError { node: usize, value: f64 },
    #[error("buffer normalization is degenerate: eps = {eps}, 1/sum(dbar) = {bound} (K = {k})")]
    DegenerateEps { eps: f64, bound: f64, k: usize },
    #[error("infeasible decision: {0}")]
    InfeasibleDecision(String),
    #[error("simplex exceeded {0} iterations")]
    SolverStall(usize),
    #[error("fluid solution does not match demand: {0}")]
    SolutionMismatch(String),
    #[error("revenue function is not concave for demand type `{0}`")]
    NonConcaveRevenue(String),
    #[error("demand rates change faster than the declared eta: measured {measured}, declared {declared}")]
    EtaViolation { measured: f64, declared: f64 },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
