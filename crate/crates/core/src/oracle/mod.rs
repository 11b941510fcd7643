//! The black-box ranking system under attack.
//!
//! A [`RankingModel`] embeds queries with a fixed linear map and ranks an
//! [`EmbeddingDatabase`] by Euclidean distance. Oracles wrap that ranking
//! behind a query budget and only ever hand out candidate ids, never scores.

mod client;
mod format;
mod server;
pub mod wire;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::domain::{CandidateId, QueryImage, RankingList, VisibleRange};
use crate::error::{Error, Result};

pub use client::RemoteOracle;
pub use format::{load_db, read_db, save_db, write_db};
pub use server::{BudgetLedger, OracleServer, ServerConfig};

/// Candidate ids with fixed embeddings of a common dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingDatabase {
    dim: usize,
    ids: Vec<CandidateId>,
    labels: Vec<Option<i64>>,
    embeddings: Vec<f64>,
    index: HashMap<CandidateId, usize>,
}

impl EmbeddingDatabase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            labels: Vec::new(),
            embeddings: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, id: CandidateId, label: Option<i64>, embedding: Vec<f64>) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDatabase("embedding dimension must be positive".into()));
        }
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: embedding.len(),
            });
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDatabase(format!("embedding of {id} is not finite")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidDatabase(format!("duplicate id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.labels.push(label);
        self.embeddings.extend(embedding);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[CandidateId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &CandidateId {
        &self.ids[i]
    }

    pub fn label(&self, i: usize) -> Option<i64> {
        self.labels[i]
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &CandidateId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn embedding_of(&self, id: &CandidateId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.embedding(i))
    }
}

/// Linear embedder `g(q) = W q` with distance `f(q, c) = ‖W q − e_c‖₂`.
#[derive(Debug, Clone)]
pub struct RankingModel {
    embed_dim: usize,
    query_dim: usize,
    /// Row-major `embed_dim × query_dim`.
    weights: Vec<f64>,
}

impl RankingModel {
    pub fn new(embed_dim: usize, query_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if embed_dim == 0 || query_dim == 0 {
            return Err(Error::InvalidSpec("model dimensions must be positive".into()));
        }
        if weights.len() != embed_dim * query_dim {
            return Err(Error::DimensionMismatch {
                expected: embed_dim * query_dim,
                got: weights.len(),
            });
        }
        Ok(Self {
            embed_dim,
            query_dim,
            weights,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.weights[e * self.query_dim..(e + 1) * self.query_dim]
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.query_dim {
            return Err(Error::DimensionMismatch {
                expected: self.query_dim,
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn embed(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_query(q)?;
        Ok((0..self.embed_dim).map(|e| dot(self.row(e), q)).collect())
    }

    /// `Wᵀ v` for an embedding-space vector `v`.
    pub fn pull_back(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.query_dim];
        for (e, &ve) in v.iter().enumerate() {
            if ve != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(e)) {
                    *o += ve * w;
                }
            }
        }
        out
    }

    /// A query whose embedding is `target` when the rows of `W` are
    /// orthonormal and no pixel saturates: `0.5 + Wᵀ(target − W·0.5)`.
    pub fn preimage(&self, target: &[f64]) -> Result<QueryImage> {
        if target.len() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                got: target.len(),
            });
        }
        let mid = vec![0.5; self.query_dim];
        let base = self.embed(&mid)?;
        let offset: Vec<f64> = target.iter().zip(&base).map(|(t, b)| t - b).collect();
        let back = self.pull_back(&offset);
        Ok(QueryImage::clipped(back.into_iter().map(|v| v + 0.5).collect()))
    }

    /// Distance from an already embedded query to every database entry.
    pub fn distances_from_embedding(&self, db: &EmbeddingDatabase, v: &[f64]) -> Vec<f64> {
        (0..db.len()).map(|i| euclidean(v, db.embedding(i))).collect()
    }

    pub fn distance(&self, q: &[f64], candidate: &[f64]) -> Result<f64> {
        Ok(euclidean(&self.embed(q)?, candidate))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ranks the whole database by ascending distance, ties broken by ascending
/// id, and keeps the first `range` entries.
pub fn rank(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q: &QueryImage,
    range: VisibleRange,
) -> Result<RankingList> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if db.dim() != model.embed_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.embed_dim(),
            got: db.dim(),
        });
    }
    let v = model.embed(q.pixels())?;
    Ok(rank_embedding(model, db, &v, range))
}

pub(crate) fn rank_embedding(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    v: &[f64],
    range: VisibleRange,
) -> RankingList {
    let dist = model.distances_from_embedding(db, v);
    let cmp = |a: &usize, b: &usize| {
        dist[*a]
            .total_cmp(&dist[*b])
            .then_with(|| db.id(*a).cmp(db.id(*b)))
    };
    let mut order: Vec<usize> = (0..db.len()).collect();
    let keep = range.truncate_len(order.len());
    if keep < order.len() {
        order.select_nth_unstable_by(keep, cmp);
        order.truncate(keep);
    }
    order.sort_unstable_by(cmp);
    RankingList::from_unique(order.into_iter().map(|i| db.id(i).clone()).collect())
}

/// A monotone query counter with a hard limit.
#[derive(Debug)]
pub struct QueryBudget {
    limit: u64,
    used: AtomicU64,
}

impl QueryBudget {
    pub fn new(limit: u64) -> Self {
        Self {
            limit,
            used: AtomicU64::new(0),
        }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used()
    }

    /// Reserves one query, or reports exhaustion without changing the count.
    pub fn try_consume(&self) -> Result<u64> {
        let limit = self.limit;
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < limit).then_some(u + 1))
            .map(|prev| prev + 1)
            .map_err(|used| Error::BudgetExhausted { used, limit })
    }

    /// Returns a reserved query that was never answered.
    pub(crate) fn release(&self) {
        let _ = self
            .used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| u.checked_sub(1));
    }
}

/// Anything that answers ranking queries under a budget.
pub trait RankingOracle: Sync {
    fn query(&self, q: &QueryImage) -> Result<RankingList>;

    fn queries_used(&self) -> u64;

    fn query_limit(&self) -> u64;

    fn visible_range(&self) -> VisibleRange;
}

/// In-process oracle over a borrowed model and database.
#[derive(Debug)]
pub struct LocalOracle<'a> {
    model: &'a RankingModel,
    db: &'a EmbeddingDatabase,
    range: VisibleRange,
    budget: QueryBudget,
}

impl<'a> LocalOracle<'a> {
    pub fn new(
        model: &'a RankingModel,
        db: &'a EmbeddingDatabase,
        range: VisibleRange,
        limit: u64,
    ) -> Result<Self> {
        if db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if db.dim() != model.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.embed_dim(),
                got: db.dim(),
            });
        }
        Ok(Self {
            model,
            db,
            range,
            budget: QueryBudget::new(limit),
        })
    }

    /// Ranking without touching the budget, for evaluation outside an attack.
    pub fn rank_uncharged(&self, q: &QueryImage) -> Result<RankingList> {
        rank(self.model, self.db, q, self.range)
    }

    pub fn model(&self) -> &RankingModel {
        self.model
    }

    pub fn db(&self) -> &EmbeddingDatabase {
        self.db
    }
}

impl RankingOracle for LocalOracle<'_> {
    fn query(&self, q: &QueryImage) -> Result<RankingList> {
        self.budget.try_consume()?;
        rank(self.model, self.db, q, self.range)
    }

    fn queries_used(&self) -> u64 {
        self.budget.used()
    }

    fn query_limit(&self) -> u64 {
        self.budget.limit()
    }

    fn visible_range(&self) -> VisibleRange {
        self.range
    }
}
