use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("candidate `{id}` has embedding dimension {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },

    #[error("a pool needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),

    #[error("candidate `{id}` has a non-finite {field}")]
    NonFinite { id: String, field: &'static str },

    #[error("index {index} is out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("budget k = {k} is outside the valid range [1, {max}]")]
    InvalidBudget { k: usize, max: usize },

    #[error("subset must not be empty")]
    EmptySubset,

    #[error("index {0} appears more than once or in both positive and negative sets")]
    OverlappingSets(usize),

    #[error(
        "exact solver limit exceeded: {points} eligible points with k = {k} \
         ({combinations} subsets; limits are {max_points} points and {max_combinations} subsets); \
         use local search instead"
    )]
    ExactTooLarge {
        points: usize,
        k: usize,
        combinations: u128,
        max_points: usize,
        max_combinations: u128,
    },

    #[error("negative set is infeasible under the Lipschitz cap (top remainder {remainder})")]
    Infeasible { remainder: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("cluster {cluster} has diameter {diameter} which exceeds d_max = {d_max}")]
    DiameterExceeded { cluster: usize, diameter: f64, d_max: f64 },

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("candidate `{id}` has no log-probability")]
    MissingLogprob { id: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("no valid records")]
    NoValidRecords,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
