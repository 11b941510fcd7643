use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),

    #[error("at least two candidates are needed to score pairs, got {0}")]
    TooFewCandidates(usize),

    #[error("database is empty")]
    EmptyDatabase,

    #[error("invalid database: {0}")]
    InvalidDatabase(String),

    /// The attacker has to stop and report its best result so far.
    #[error("query budget exhausted ({used} of {limit} used)")]
    BudgetExhausted { used: u64, limit: u64 },

    /// The remote service refused the query because the client's budget ran out.
    #[error("remote budget exhausted: {0}")]
    RemoteBudgetExhausted(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("request rejected: {0}")]
    BadRequest(String),

    #[error("response schema violation: {0}")]
    Schema(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(
            self,
            Error::BudgetExhausted { .. } | Error::RemoteBudgetExhausted(_)
        )
    }
}
