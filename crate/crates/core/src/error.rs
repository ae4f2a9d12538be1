use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("routing graph contains a cycle through queue {0}")]
    CyclicRouting(usize),
    #[error("queue {0} routes to more than one downstream queue")]
    MultipleDownstream(usize),
    #[error("schedule set is empty")]
    EmptyScheduleSet,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("policy/model mismatch: {0}")]
    PolicyModelMismatch(String),
    #[error("negative queue content {value} at queue {queue}")]
    NegativeQueue { queue: usize, value: f64 },
    #[error("horizon too short: need {needed} slots, path has {available}")]
    HorizonTooShort { needed: usize, available: usize },
    #[error("vertex enumeration budget exceeded: {candidates} candidate subsets > budget {budget}")]
    BudgetExceeded { candidates: u128, budget: u128 },
    #[error("lift solver did not reach tolerance {tol:e} in {iterations} iterations (residual {residual:e})")]
    SolverDivergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("no root of the balance equation in the admissible interval")]
    NoRoot,
    #[error("trajectory grids do not match: {0}")]
    GridMismatch(String),
    #[error("invalid arrival model: {0}")]
    InvalidArrivals(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("unknown preset `{0}`")]
    PresetUnknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
