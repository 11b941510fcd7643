//! Order attacks against truncated ranking systems: the SRC metric, a linear
//! embedding oracle (local or over HTTP), white-box PGD and five black-box
//! optimizers, and the (k, N) experiment harness.

pub mod blackbox;
pub mod domain;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod src_metric;
pub mod stats;
pub mod whitebox;

pub use domain::{
    clamp_to_feasible, mean_rank, AttackResult, AttackSpec, CandidateId, Perturbation, Permutation,
    QueryImage, RankingList, TracePoint, VisibleRange,
};
pub use error::{Error, Result};
pub use oracle::{rank, EmbeddingDatabase, LocalOracle, QueryBudget, RankingModel, RankingOracle};
pub use src_metric::{compute_src, concordant_fraction, kendall_tau, src, ScoreMatrix};
