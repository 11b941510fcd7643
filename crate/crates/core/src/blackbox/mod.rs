//! Gradient-free order attacks that only see truncated rankings.
//!
//! Every optimizer maximizes τ_S as reported by a [`RankingOracle`], starting
//! from the zero perturbation, and returns the best perturbation it ever
//! evaluated. One evaluation costs exactly one oracle query; the attack stops
//! as soon as the query budget is spent.

mod beta;
mod pso;
mod rand_search;
mod sign_ascent;
mod space;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    clamp_to_feasible, mean_rank, AttackResult, AttackSpec, CandidateId, Perturbation, Permutation,
    QueryImage, RankingList, TracePoint,
};
use crate::error::{Error, Result};
use crate::oracle::RankingOracle;
use crate::src_metric::src;

pub use beta::{beta_score, BetaAttack, BETA_PARAM_FLOOR};
pub use pso::{velocity_update, Swarm};
pub use rand_search::{sample_uniform, RandSearch};
pub use sign_ascent::{estimate_gradient, Probe, SignAscent};
pub use space::{expand_reduced, SearchSpace, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rand,
    Beta,
    Pso,
    Nes,
    Spsa,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Rand,
        OptimizerKind::Beta,
        OptimizerKind::Pso,
        OptimizerKind::Nes,
        OptimizerKind::Spsa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Rand => "rand",
            OptimizerKind::Beta => "beta",
            OptimizerKind::Pso => "pso",
            OptimizerKind::Nes => "nes",
            OptimizerKind::Spsa => "spsa",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub omega: f64,
    pub phi_p: f64,
    pub phi_g: f64,
    pub swarm: usize,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            omega: 1.1,
            phi_p: 0.57,
            phi_g: 0.44,
            swarm: 40,
        }
    }
}

/// Starting point of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Zero,
    /// Uniform in the ε-box; kept for comparison against zero starts.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Evaluations per iteration (H).
    pub batch: usize,
    /// Sign-step size of NES and SPSA.
    pub learning_rate: f64,
    /// NES sampling scale; `None` means 2ε.
    pub sigma: Option<f64>,
    /// SPSA probe size.
    pub delta: f64,
    pub beta_lr: f64,
    pub pso: PsoConfig,
    pub seed: u64,
    pub reduced_dims: Option<Shape>,
    pub init: Init,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Nes,
            batch: 50,
            learning_rate: 2.0 / 255.0,
            sigma: None,
            delta: 2.0 / 255.0,
            beta_lr: 3.0,
            pso: PsoConfig::default(),
            seed: 0,
            reduced_dims: None,
            init: Init::Zero,
        }
    }
}

impl OptimizerConfig {
    pub fn for_kind(kind: OptimizerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn sigma_for(&self, epsilon: f64) -> f64 {
        self.sigma.unwrap_or(2.0 * epsilon)
    }

    pub fn validate(&self, query_dim: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        match self.kind {
            OptimizerKind::Nes | OptimizerKind::Spsa if self.batch % 2 != 0 => {
                return Err(Error::Config(format!(
                    "{} draws antithetic pairs, so the batch must be even (got {})",
                    self.kind, self.batch
                )));
            }
            _ => {}
        }
        positive("learning_rate", self.learning_rate)?;
        positive("delta", self.delta)?;
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if !(self.beta_lr >= 0.0) {
            return Err(Error::Config(format!("beta_lr must be non-negative, got {}", self.beta_lr)));
        }
        if self.pso.swarm == 0 {
            return Err(Error::Config("swarm size must be at least 1".into()));
        }
        if let Some(r) = self.reduced_dims {
            if r.len() > query_dim || r.is_empty() {
                return Err(Error::Config(format!(
                    "reduced shape {r} does not fit a query of dimension {query_dim}"
                )));
            }
        }
        Ok(())
    }
}

/// What a black-box optimizer maximizes, in its own search coordinates.
pub trait SearchObjective {
    fn dim(&self) -> usize;

    fn epsilon(&self) -> f64;

    /// Keeps an iterate feasible in search coordinates.
    fn project(&self, r: &mut Vec<f64>);

    /// Objective value at `r`, or `None` once the budget is spent.
    fn evaluate(&mut self, r: &[f64]) -> Result<Option<f64>>;
}

/// τ_S of the oracle's answer for a query; every call costs one query.
pub struct SurrogateObjective<'a, O: RankingOracle + ?Sized> {
    oracle: &'a O,
    candidates: &'a [CandidateId],
    permutation: &'a Permutation,
}

impl<'a, O: RankingOracle + ?Sized> SurrogateObjective<'a, O> {
    pub fn new(oracle: &'a O, spec: &'a AttackSpec) -> Self {
        Self {
            oracle,
            candidates: spec.candidates(),
            permutation: spec.permutation(),
        }
    }

    pub fn evaluate(&self, q_tilde: &QueryImage) -> Result<(f64, RankingList)> {
        let ranking = self.oracle.query(q_tilde)?;
        let tau = src(self.candidates, self.permutation, &ranking)?;
        Ok((tau, ranking))
    }

    pub fn oracle(&self) -> &O {
        self.oracle
    }
}

struct Best {
    tau: f64,
    perturbation: Perturbation,
    mean_rank: Option<f64>,
}

/// Oracle-backed objective: expands, projects, queries, and keeps the best
/// evaluation seen so far.
struct Session<'a, O: RankingOracle + ?Sized> {
    objective: SurrogateObjective<'a, O>,
    q: &'a QueryImage,
    space: SearchSpace,
    limit: u64,
    issued: u64,
    exhausted: bool,
    best: Option<Best>,
}

impl<O: RankingOracle + ?Sized> SearchObjective for Session<'_, O> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn epsilon(&self) -> f64 {
        self.space.epsilon()
    }

    fn project(&self, r: &mut Vec<f64>) {
        self.space.project(self.q.pixels(), r);
    }

    fn evaluate(&mut self, r: &[f64]) -> Result<Option<f64>> {
        if self.exhausted || self.issued >= self.limit {
            self.exhausted = true;
            return Ok(None);
        }
        let perturbation = clamp_to_feasible(self.q, &self.space.expand(r), self.space.epsilon())?;
        let (tau, ranking) = match self.objective.evaluate(&self.q.perturbed(&perturbation)) {
            Ok(v) => v,
            // a refused query is not counted
            Err(e) if e.is_budget_exhausted() => {
                self.exhausted = true;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        self.issued += 1;
        if self.best.as_ref().map_or(true, |b| tau > b.tau) {
            self.best = Some(Best {
                tau,
                mean_rank: mean_rank(&ranking, self.objective.candidates),
                perturbation,
            });
        }
        Ok(Some(tau))
    }
}

/// Runs the configured optimizer until the query budget is spent.
///
/// The budget is the smaller of `spec.query_budget` and what the oracle has
/// left. Running out is the normal stop condition; transport and protocol
/// failures are returned as errors.
pub fn optimize<O: RankingOracle + ?Sized>(
    oracle: &O,
    q: &QueryImage,
    spec: &AttackSpec,
    cfg: &OptimizerConfig,
) -> Result<AttackResult> {
    cfg.validate(q.dim())?;
    let full = Shape::flat(q.dim());
    let full = match cfg.reduced_dims {
        // reduced search needs the image layout; assume square RGB-like CHW
        Some(r) => infer_full_shape(q.dim(), r)?,
        None => full,
    };
    let space = SearchSpace::new(full, cfg.reduced_dims, spec.epsilon)?;
    optimize_in(oracle, q, spec, cfg, space)
}

/// Like [`optimize`], with an explicit layout of the query vector.
pub fn optimize_shaped<O: RankingOracle + ?Sized>(
    oracle: &O,
    q: &QueryImage,
    shape: Shape,
    spec: &AttackSpec,
    cfg: &OptimizerConfig,
) -> Result<AttackResult> {
    cfg.validate(q.dim())?;
    if shape.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: shape.len(),
        });
    }
    let space = SearchSpace::new(shape, cfg.reduced_dims, spec.epsilon)?;
    optimize_in(oracle, q, spec, cfg, space)
}

fn infer_full_shape(dim: usize, reduced: Shape) -> Result<Shape> {
    let per_channel = dim / reduced.channels.max(1);
    let side = (per_channel as f64).sqrt().round() as usize;
    let shape = Shape::new(reduced.channels, side, side);
    if shape.len() != dim {
        return Err(Error::Config(format!(
            "cannot infer a {}-channel square layout for dimension {dim}; pass the query shape",
            reduced.channels
        )));
    }
    Ok(shape)
}

fn optimize_in<O: RankingOracle + ?Sized>(
    oracle: &O,
    q: &QueryImage,
    spec: &AttackSpec,
    cfg: &OptimizerConfig,
    space: SearchSpace,
) -> Result<AttackResult> {
    let start_used = oracle.queries_used();
    let available = oracle.query_limit().saturating_sub(start_used);
    let limit = spec.query_budget.min(available);
    if limit == 0 {
        return Err(Error::BudgetExhausted {
            used: start_used,
            limit: oracle.query_limit(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut session = Session {
        objective: SurrogateObjective::new(oracle, spec),
        q,
        space,
        limit,
        issued: 0,
        exhausted: false,
        best: None,
    };
    let dim = session.dim();
    let eps = spec.epsilon;

    let start = match cfg.init {
        Init::Zero => vec![0.0; dim],
        Init::Uniform => {
            let mut r = sample_uniform(dim, eps, &mut rng);
            session.project(&mut r);
            r
        }
    };
    let baseline = session.evaluate(&start)?;
    let mut trace = Vec::new();
    record(&mut trace, 0, &session);

    let mut iteration = 0;
    if let Some(baseline) = baseline {
        match cfg.kind {
            OptimizerKind::Rand => {
                let mut opt = RandSearch::new(cfg.batch);
                while opt.step(&mut session, &mut rng)? {
                    iteration += 1;
                    record(&mut trace, iteration, &session);
                }
            }
            OptimizerKind::Beta => {
                let mut opt = BetaAttack::new(dim, cfg.batch, cfg.beta_lr);
                while opt.step(&mut session, &mut rng)? {
                    iteration += 1;
                    record(&mut trace, iteration, &session);
                }
            }
            OptimizerKind::Pso => {
                if let Some(mut opt) = Swarm::init(&mut session, &cfg.pso, start, baseline, &mut rng)? {
                    iteration += 1;
                    record(&mut trace, iteration, &session);
                    while opt.step(&mut session, &mut rng)? {
                        iteration += 1;
                        record(&mut trace, iteration, &session);
                    }
                }
            }
            OptimizerKind::Nes | OptimizerKind::Spsa => {
                let probe = if cfg.kind == OptimizerKind::Nes {
                    Probe::Gaussian {
                        sigma: cfg.sigma_for(eps),
                    }
                } else {
                    Probe::Rademacher { delta: cfg.delta }
                };
                let mut opt = SignAscent::new(start, cfg.batch / 2, cfg.learning_rate, probe);
                while opt.step(&mut session, &mut rng)? {
                    iteration += 1;
                    record(&mut trace, iteration, &session);
                }
            }
        }
    }
    // a batch cut short by the budget still counts
    if trace.last().map_or(true, |t| t.queries < session.issued) {
        record(&mut trace, iteration + 1, &session);
    }

    let queries_used = oracle.queries_used() - start_used;
    let best = session.best.ok_or(Error::BudgetExhausted {
        used: oracle.queries_used(),
        limit: oracle.query_limit(),
    })?;
    Ok(AttackResult {
        perturbation: best.perturbation,
        tau_s: best.tau,
        mean_rank: best.mean_rank,
        queries_used,
        trace,
    })
}

fn record<O: RankingOracle + ?Sized>(trace: &mut Vec<TracePoint>, iteration: usize, s: &Session<'_, O>) {
    if let Some(b) = &s.best {
        trace.push(TracePoint {
            iteration,
            queries: s.issued,
            tau_s: b.tau,
        });
    }
}

pub(crate) fn uniform_in_box(dim: usize, eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    if eps == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim).map(|_| rng.gen_range(-eps..=eps)).collect()
}
