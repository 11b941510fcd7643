//! The (k, N) order-attack protocol: per trial draw a held-out query, take
//! the clean top-k as candidates, draw a random permutation, attack, and
//! re-evaluate the final perturbation with a fresh oracle call.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blackbox::{optimize_shaped, OptimizerConfig, OptimizerKind, Shape};
use crate::domain::{
    mean_rank, AttackResult, AttackSpec, CandidateId, Perturbation, Permutation, QueryImage, RankingList,
    VisibleRange,
};
use crate::error::{Error, Result};
use crate::oracle::{load_db, rank, EmbeddingDatabase, LocalOracle, RankingModel};
use crate::src_metric::src;
use crate::stats::Summary;
use crate::whitebox::{pgd_attack, PgdConfig, WhiteboxLossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub per_class: usize,
    pub embed_dim: usize,
    pub query_shape: Shape,
    /// Spread of class centers around the embedding of the mid-gray image.
    pub center_scale: f64,
    pub intra_class_std: f64,
    /// Extra draws per class kept out of the database and used as queries.
    pub holdout_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            embed_dim: 32,
            query_shape: Shape::new(3, 32, 32),
            center_scale: 1.0,
            intra_class_std: 0.3,
            holdout_per_class: 10,
            seed: 0,
        }
    }
}

/// A model, its database, and the CHW layout of queries.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: RankingModel,
    pub db: EmbeddingDatabase,
    pub shape: Shape,
    /// Embeddings of held-out queries; when empty, queries are drawn from the database.
    pub holdout: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn query_pool_len(&self) -> usize {
        if self.holdout.is_empty() {
            self.db.len()
        } else {
            self.holdout.len()
        }
    }

    /// The query whose embedding is entry `i` of the query pool.
    pub fn query(&self, i: usize) -> Result<QueryImage> {
        match self.holdout.get(i) {
            Some(e) => self.model.preimage(e),
            None => self.model.preimage(self.db.embedding(i)),
        }
    }
}

/// `E × D` weights with orthonormal rows, from the QR factorization of a
/// Gaussian matrix.
pub fn orthonormal_model(embed_dim: usize, query_dim: usize, rng: &mut impl Rng) -> Result<RankingModel> {
    if embed_dim == 0 || embed_dim > query_dim {
        return Err(Error::Config(format!(
            "embedding dimension {embed_dim} must be in 1..={query_dim}"
        )));
    }
    let g = DMatrix::<f64>::from_fn(query_dim, embed_dim, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    // column j of Q is row j of W
    let mut weights = Vec::with_capacity(embed_dim * query_dim);
    for j in 0..embed_dim {
        weights.extend(q.column(j).iter());
    }
    RankingModel::new(embed_dim, query_dim, weights)
}

/// Gaussian class clusters around the embedding of the mid-gray image, so
/// that preimages of database items stay inside `[0, 1]^D`.
pub fn gen_synthetic_db(params: &SyntheticParams) -> Result<Dataset> {
    if params.classes == 0 || params.per_class == 0 {
        return Err(Error::Config("class and per-class counts must be positive".into()));
    }
    if !(params.intra_class_std >= 0.0) || !(params.center_scale >= 0.0) {
        return Err(Error::Config("scales must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let e = params.embed_dim;
    let model = orthonormal_model(e, params.query_shape.len(), &mut rng)?;
    let origin = model.embed(&vec![0.5; model.query_dim()])?;
    let mut db = EmbeddingDatabase::new(e);
    let mut holdout = Vec::with_capacity(params.classes * params.holdout_per_class);
    for class in 0..params.classes {
        let center: Vec<f64> = origin
            .iter()
            .map(|o| o + params.center_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut member = || -> Vec<f64> {
            center
                .iter()
                .map(|c| c + params.intra_class_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        for item in 0..params.per_class {
            let id = CandidateId::new(format!("c{class:03}-{item:04}"));
            db.push(id, Some(class as i64), member())?;
        }
        for _ in 0..params.holdout_per_class {
            holdout.push(member());
        }
    }
    Ok(Dataset {
        model,
        db,
        shape: params.query_shape,
        holdout,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticParams),
    /// An embedding file paired with a random orthonormal model.
    File {
        path: PathBuf,
        model_seed: u64,
        query_shape: Shape,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticParams::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(p) => gen_synthetic_db(p),
            DatasetSource::File {
                path,
                model_seed,
                query_shape,
            } => {
                let db = load_db(path)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*model_seed);
                let model = orthonormal_model(db.dim(), query_shape.len(), &mut rng)?;
                Ok(Dataset {
                    model,
                    db,
                    shape: *query_shape,
                    holdout: Vec::new(),
                })
            }
        }
    }
}

/// An L∞ budget, kept as an exact ratio when given as one ("4/255").
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Ratio { num: u64, den: u64 },
    Decimal(f64),
}

impl Epsilon {
    pub const fn over_255(num: u64) -> Self {
        Epsilon::Ratio { num, den: 255 }
    }

    pub fn value(self) -> f64 {
        match self {
            Epsilon::Ratio { num, den } => num as f64 / den as f64,
            Epsilon::Decimal(v) => v,
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Ratio { num, den } => write!(f, "{num}/{den}"),
            Epsilon::Decimal(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("epsilon must be a fraction like 4/255 or a decimal, got {s:?}"));
        let eps = match s.split_once('/') {
            Some((n, d)) => {
                let num: u64 = n.trim().parse().map_err(|_| bad())?;
                let den: u64 = d.trim().parse().map_err(|_| bad())?;
                if den == 0 {
                    return Err(bad());
                }
                Epsilon::Ratio { num, den }
            }
            None => Epsilon::Decimal(s.parse().map_err(|_| bad())?),
        };
        let v = eps.value();
        if !(v >= 0.0) || !v.is_finite() {
            return Err(bad());
        }
        Ok(eps)
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string().parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Which attack a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    /// Zero perturbation; the clean baseline.
    None,
    Whitebox,
    Blackbox(OptimizerKind),
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attack::None => f.write_str("none"),
            Attack::Whitebox => f.write_str("whitebox"),
            Attack::Blackbox(k) => k.fmt(f),
        }
    }
}

impl FromStr for Attack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Attack::None),
            "whitebox" | "pgd" => Ok(Attack::Whitebox),
            other => other
                .parse()
                .map(Attack::Blackbox)
                .map_err(|_| Error::Config(format!("unknown attack {s:?}"))),
        }
    }
}

impl Serialize for Attack {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Attack {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    #[default]
    Random,
    Identity,
}

/// How trials are scheduled. Results do not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub visible_range: VisibleRange,
    pub epsilon: Epsilon,
    pub query_budget: u64,
    pub trials: usize,
    pub attack: Attack,
    pub permutation: PermutationMode,
    pub seed: u64,
    pub execution: Execution,
    pub dataset: DatasetSource,
    pub whitebox: WhiteboxLossConfig,
    pub pgd: PgdConfig,
    /// Black-box settings; `kind` and `seed` are overridden per trial.
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 5,
            visible_range: VisibleRange::Unbounded,
            epsilon: Epsilon::over_255(4),
            query_budget: 1000,
            trials: 200,
            attack: Attack::Blackbox(OptimizerKind::Nes),
            permutation: PermutationMode::Random,
            seed: 0,
            execution: Execution::Parallel,
            dataset: DatasetSource::default(),
            whitebox: WhiteboxLossConfig::default(),
            pgd: PgdConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if let VisibleRange::Top(n) = self.visible_range {
            if self.k > n {
                return Err(Error::Config(format!("k = {} exceeds N = {n}", self.k)));
            }
        }
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if self.query_budget == 0 {
            return Err(Error::Config("query budget must be positive".into()));
        }
        if let Attack::Whitebox = self.attack {
            self.pgd.validate(self.epsilon.value())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Index into the held-out queries, or into the database when there are none.
    pub query_index: usize,
    pub permutation: Permutation,
    /// From a fresh, uncharged ranking of the final perturbed query.
    pub tau_s: f64,
    /// What the attack itself reported.
    pub claimed_tau_s: f64,
    /// Only when N is unbounded.
    pub mean_rank: Option<f64>,
    pub queries_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub per_trial_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub tau_s: Summary,
    pub mean_rank: Option<f64>,
    pub mean_queries: f64,
    pub timing: Timing,
    pub trials: Vec<TrialRecord>,
}

/// Per-trial seed, independent of scheduling.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ (trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn random_permutation(k: usize, rng: &mut impl Rng) -> Permutation {
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(rng);
    Permutation::new(idx).expect("a shuffle is a permutation")
}

/// The permutation that lists `candidates` in `desired` order.
pub fn permutation_for_order(candidates: &[CandidateId], desired: &[CandidateId]) -> Result<Permutation> {
    if candidates.len() != desired.len() {
        return Err(Error::InvalidPermutation("orders differ in length".into()));
    }
    let idx = desired
        .iter()
        .map(|d| {
            candidates
                .iter()
                .position(|c| c == d)
                .ok_or_else(|| Error::InvalidPermutation(format!("{d} is not a candidate")))
        })
        .collect::<Result<Vec<_>>>()?;
    Permutation::new(idx)
}

pub fn run_kn_oa(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = cfg.dataset.load()?;
    run_kn_oa_on(&dataset, cfg)
}

/// Runs the protocol on an already loaded dataset (`cfg.dataset` is only echoed).
pub fn run_kn_oa_on(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let VisibleRange::Top(n) = cfg.visible_range {
        if dataset.db.len() < n {
            return Err(Error::Config(format!(
                "database has {} entries, fewer than N = {n}",
                dataset.db.len()
            )));
        }
    }
    if dataset.db.len() < cfg.k {
        return Err(Error::Config(format!(
            "database has {} entries, fewer than k = {}",
            dataset.db.len(),
            cfg.k
        )));
    }
    let start = Instant::now();
    let trials = run_trials(dataset, cfg)?;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;

    let taus: Vec<f64> = trials.iter().map(|t| t.tau_s).collect();
    let ranks: Option<Vec<f64>> = trials.iter().map(|t| t.mean_rank).collect();
    let mean_rank = ranks
        .filter(|_| cfg.visible_range.is_unbounded())
        .map(|r| crate::stats::mean(&r));
    Ok(ExperimentReport {
        config: cfg.clone(),
        tau_s: Summary::of(&taus).expect("at least one trial"),
        mean_rank,
        mean_queries: trials.iter().map(|t| t.queries_used as f64).sum::<f64>() / trials.len() as f64,
        timing: Timing {
            total_ms,
            per_trial_ms: total_ms / trials.len() as f64,
        },
        trials,
    })
}

fn run_trials(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    #[cfg(feature = "parallel")]
    if cfg.execution == Execution::Parallel {
        use rayon::prelude::*;
        return (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(dataset, cfg, i))
            .collect();
    }
    (0..cfg.trials).map(|i| run_trial(dataset, cfg, i)).collect()
}

/// One trial of the protocol, fully determined by `(cfg.seed, trial)`.
pub fn run_trial(dataset: &Dataset, cfg: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    let Dataset { model, db, .. } = dataset;
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_index = rng.gen_range(0..dataset.query_pool_len());
    let q = dataset.query(query_index)?;
    let clean = rank(model, db, &q, cfg.visible_range)?;
    let candidates = clean.top(cfg.k).to_vec();
    let permutation = match cfg.permutation {
        PermutationMode::Random => random_permutation(cfg.k, &mut rng),
        PermutationMode::Identity => Permutation::identity(cfg.k),
    };
    let eps = cfg.epsilon.value();
    let spec = AttackSpec::new(candidates, permutation.clone(), cfg.visible_range, eps, cfg.query_budget)?
        .with_margin(cfg.whitebox.margin_gamma)
        .with_xi(cfg.whitebox.xi);
    let attack_seed = rng.gen();

    let result = execute_attack(dataset, cfg, &q, &spec, &clean, attack_seed)?;
    let (perturbation, claimed_tau_s, queries_used) = (result.perturbation, result.tau_s, result.queries_used);

    let verified = rank(model, db, &q.perturbed(&perturbation), cfg.visible_range)?;
    let tau_s = src(spec.candidates(), spec.permutation(), &verified)?;
    let mean_rank = if cfg.visible_range.is_unbounded() {
        mean_rank(&verified, spec.candidates())
    } else {
        None
    };
    Ok(TrialRecord {
        trial,
        seed,
        query_index,
        permutation,
        tau_s,
        claimed_tau_s,
        mean_rank,
        queries_used,
    })
}

/// Runs `cfg.attack` on one query against a local oracle limited to
/// `cfg.query_budget`. `clean` is the unperturbed ranking under `cfg.visible_range`.
pub fn execute_attack(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    q: &QueryImage,
    spec: &AttackSpec,
    clean: &RankingList,
    attack_seed: u64,
) -> Result<AttackResult> {
    let Dataset { model, db, shape, .. } = dataset;
    match cfg.attack {
        Attack::None => Ok(AttackResult {
            perturbation: Perturbation::zero(q.dim(), spec.epsilon),
            tau_s: src(spec.candidates(), spec.permutation(), clean)?,
            mean_rank: if cfg.visible_range.is_unbounded() {
                mean_rank(clean, spec.candidates())
            } else {
                None
            },
            queries_used: 0,
            trace: Vec::new(),
        }),
        Attack::Whitebox => pgd_attack(model, db, q, spec, &cfg.pgd, &cfg.whitebox, attack_seed),
        Attack::Blackbox(kind) => {
            let oracle = LocalOracle::new(model, db, cfg.visible_range, cfg.query_budget)?;
            let opt = OptimizerConfig {
                kind,
                seed: attack_seed,
                ..cfg.optimizer.clone()
            };
            optimize_shaped(&oracle, q, *shape, spec, &opt)
        }
    }
}

/// Three collinear embeddings `e1 = e2 − o`, `e3 = e2 + o` with the query
/// sitting on `e2`, and a permutation asking for `c1 ≺ c3 ≺ c2`.
pub struct CollinearInstance {
    pub dataset: Dataset,
    pub query: QueryImage,
    pub candidates: Vec<CandidateId>,
    pub permutation: Permutation,
}

pub fn collinear_triple(query_shape: Shape, offset: f64, seed: u64) -> Result<CollinearInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = orthonormal_model(2, query_shape.len(), &mut rng)?;
    let e2 = model.embed(&vec![0.5; model.query_dim()])?;
    let dir: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let o: Vec<f64> = dir.iter().map(|d| offset * d / norm).collect();
    let mut db = EmbeddingDatabase::new(2);
    let ids = [CandidateId::new("c1"), CandidateId::new("c2"), CandidateId::new("c3")];
    db.push(ids[0].clone(), None, vec![e2[0] - o[0], e2[1] - o[1]])?;
    db.push(ids[1].clone(), None, e2.clone())?;
    db.push(ids[2].clone(), None, vec![e2[0] + o[0], e2[1] + o[1]])?;
    let query = model.preimage(&e2)?;
    let candidates = ids.to_vec();
    let permutation = permutation_for_order(&candidates, &[ids[0].clone(), ids[2].clone(), ids[1].clone()])?;
    Ok(CollinearInstance {
        dataset: Dataset {
            model,
            db,
            shape: query_shape,
            holdout: Vec::new(),
        },
        query,
        candidates,
        permutation,
    })
}

pub fn write_json(report: &ExperimentReport, out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, report).map_err(|e| Error::Io(e.into()))
}

/// Per-trial CSV: `trial,tau_s,mean_rank,queries_used,seed`.
pub fn write_csv(report: &ExperimentReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "trial,tau_s,mean_rank,queries_used,seed")?;
    for t in &report.trials {
        let mr = t.mean_rank.map(|m| m.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", t.trial, t.tau_s, mr, t.queries_used, t.seed)?;
    }
    Ok(())
}

/// Aligned human-readable summary.
pub fn write_table(report: &ExperimentReport, mut out: impl Write) -> Result<()> {
    let c = &report.config;
    let mr = report.mean_rank.map_or_else(|| "-".to_string(), |m| format!("{m:.1}"));
    let s = &report.tau_s;
    let rows = [
        ("attack", c.attack.to_string()),
        ("k", c.k.to_string()),
        ("N", c.visible_range.to_string()),
        ("epsilon", c.epsilon.to_string()),
        ("Q", c.query_budget.to_string()),
        ("trials", s.count.to_string()),
        ("mean tau_S", format!("{:.3}", s.mean)),
        ("stdev tau_S", format!("{:.3}", s.stdev)),
        ("median tau_S", format!("{:.3}", s.median)),
        ("min tau_S", format!("{:.3}", s.min)),
        ("max tau_S", format!("{:.3}", s.max)),
        ("mean mR", mr),
        ("mean queries", format!("{:.1}", report.mean_queries)),
        ("wall ms", format!("{:.1}", report.timing.total_ms)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        writeln!(out, "{k:<width$}  {v:>10}")?;
    }
    Ok(())
}
