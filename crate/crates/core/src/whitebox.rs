//! White-box order attack: hinge losses over the distance chain and a
//! sign-gradient PGD loop.
//!
//! All gradients are computed in embedding space first and pulled back to
//! query space with a single `Wᵀ` product.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    clamp_to_feasible, mean_rank, AttackResult, AttackSpec, CandidateId, Perturbation, QueryImage,
    TracePoint,
};
use crate::error::{Error, Result};
use crate::oracle::{euclidean, rank, EmbeddingDatabase, RankingModel};
use crate::src_metric::src;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteboxLossConfig {
    /// Weight of the absolute-rank term.
    pub xi: f64,
    pub margin_gamma: f64,
    /// Distractors drawn from the database minus the candidates; `None` uses all of them.
    pub distractor_count: Option<usize>,
}

impl Default for WhiteboxLossConfig {
    fn default() -> Self {
        Self {
            xi: 0.0,
            margin_gamma: 0.0,
            distractor_count: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    pub eta: f64,
    pub steps: usize,
    /// Round every iterate toward zero onto the 1/255 grid.
    pub quantize: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            eta: 1.0 / 255.0,
            steps: 24,
            quantize: false,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("PGD step size must be positive, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(Error::Config("PGD needs at least one step".into()));
        }
        if epsilon > 0.0 && self.eta > epsilon {
            log::debug!("PGD step {} exceeds epsilon {epsilon}; iterates saturate", self.eta);
        }
        Ok(())
    }
}

/// A loss value with its gradient in query space.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

struct Terms {
    dist: Vec<f64>,
    unit: Vec<Vec<f64>>,
}

/// Distances from `v` and the unit vectors `(v − e)/‖v − e‖` (zero when degenerate).
fn terms(v: &[f64], embeddings: &[&[f64]]) -> Terms {
    let mut dist = Vec::with_capacity(embeddings.len());
    let mut unit = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        let d = euclidean(v, e);
        dist.push(d);
        if d > 0.0 {
            unit.push(v.iter().zip(e.iter()).map(|(a, b)| (a - b) / d).collect());
        } else {
            unit.push(vec![0.0; v.len()]);
        }
    }
    Terms { dist, unit }
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Embedding-space value and gradient of the relative-order loss for
/// candidates already listed in the desired order.
fn reo_embedded(v: &[f64], ordered: &[&[f64]], gamma: f64) -> (f64, Vec<f64>) {
    let t = terms(v, ordered);
    let mut value = 0.0;
    let mut grad = vec![0.0; v.len()];
    for i in 0..ordered.len() {
        for j in (i + 1)..ordered.len() {
            let h = gamma + t.dist[i] - t.dist[j];
            if h > 0.0 {
                value += h;
                add_scaled(&mut grad, &t.unit[i], 1.0);
                add_scaled(&mut grad, &t.unit[j], -1.0);
            }
        }
    }
    (value, grad)
}

fn qa_embedded(v: &[f64], candidates: &[&[f64]], distractors: &[&[f64]]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; v.len()];
    if distractors.is_empty() {
        return (0.0, grad);
    }
    let c = terms(v, candidates);
    let x = terms(v, distractors);
    let mut value = 0.0;
    for (ci, dc) in c.dist.iter().enumerate() {
        for (xi, dx) in x.dist.iter().enumerate() {
            let h = dc - dx;
            if h > 0.0 {
                value += h;
                add_scaled(&mut grad, &c.unit[ci], 1.0);
                add_scaled(&mut grad, &x.unit[xi], -1.0);
            }
        }
    }
    (value, grad)
}

fn lookup<'a>(db: &'a EmbeddingDatabase, ids: &[CandidateId]) -> Result<Vec<&'a [f64]>> {
    ids.iter()
        .map(|id| {
            db.embedding_of(id)
                .ok_or_else(|| Error::InvalidSpec(format!("candidate {id} is not in the database")))
        })
        .collect()
}

fn check_dims(model: &RankingModel, db: &EmbeddingDatabase, q: &[f64]) -> Result<()> {
    if q.len() != model.query_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.query_dim(),
            got: q.len(),
        });
    }
    if db.dim() != model.embed_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.embed_dim(),
            got: db.dim(),
        });
    }
    Ok(())
}

/// Σ_{i<j} [γ + f(q̃, c_{p_i}) − f(q̃, c_{p_j})]⁺ with its exact gradient.
pub fn loss_reo(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q_tilde: &[f64],
    desired_order: &[CandidateId],
    margin_gamma: f64,
) -> Result<LossValue> {
    check_dims(model, db, q_tilde)?;
    if desired_order.len() < 2 {
        return Err(Error::TooFewCandidates(desired_order.len()));
    }
    let ordered = lookup(db, desired_order)?;
    let v = model.embed(q_tilde)?;
    let (value, g) = reo_embedded(&v, &ordered, margin_gamma);
    Ok(LossValue {
        value,
        gradient: model.pull_back(&g),
    })
}

/// Σ_{c∈C} Σ_{x∈distractors} [f(q̃, c) − f(q̃, x)]⁺ with its exact gradient.
pub fn loss_qa_plus(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q_tilde: &[f64],
    candidates: &[CandidateId],
    distractors: &[CandidateId],
) -> Result<LossValue> {
    check_dims(model, db, q_tilde)?;
    if distractors.iter().any(|x| candidates.contains(x)) {
        return Err(Error::InvalidSpec("distractors overlap the candidate set".into()));
    }
    let c = lookup(db, candidates)?;
    let x = lookup(db, distractors)?;
    let v = model.embed(q_tilde)?;
    let (value, g) = qa_embedded(&v, &c, &x);
    Ok(LossValue {
        value,
        gradient: model.pull_back(&g),
    })
}

/// `loss_reo + ξ · loss_qa_plus`.
pub fn loss_oa(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q_tilde: &[f64],
    spec: &AttackSpec,
    cfg: &WhiteboxLossConfig,
    distractors: &[CandidateId],
) -> Result<LossValue> {
    let objective = OrderLoss::new(model, db, spec, cfg, distractors)?;
    objective.evaluate(q_tilde)
}

/// Pre-resolved embeddings for repeated loss evaluations.
struct OrderLoss<'a> {
    model: &'a RankingModel,
    ordered: Vec<&'a [f64]>,
    distractors: Vec<&'a [f64]>,
    gamma: f64,
    xi: f64,
}

impl<'a> OrderLoss<'a> {
    fn new(
        model: &'a RankingModel,
        db: &'a EmbeddingDatabase,
        spec: &AttackSpec,
        cfg: &WhiteboxLossConfig,
        distractors: &[CandidateId],
    ) -> Result<Self> {
        if spec.k() < 2 {
            return Err(Error::TooFewCandidates(spec.k()));
        }
        if distractors.iter().any(|x| spec.candidates().contains(x)) {
            return Err(Error::InvalidSpec("distractors overlap the candidate set".into()));
        }
        Ok(Self {
            model,
            ordered: lookup(db, &spec.desired_order())?,
            distractors: lookup(db, distractors)?,
            gamma: cfg.margin_gamma,
            xi: cfg.xi,
        })
    }

    fn evaluate(&self, q_tilde: &[f64]) -> Result<LossValue> {
        let v = self.model.embed(q_tilde)?;
        let (reo, mut g) = reo_embedded(&v, &self.ordered, self.gamma);
        let mut value = reo;
        if self.xi != 0.0 {
            // the candidate set is the same whatever the order
            let (qa, gq) = qa_embedded(&v, &self.ordered, &self.distractors);
            value += self.xi * qa;
            add_scaled(&mut g, &gq, self.xi);
        }
        Ok(LossValue {
            value,
            gradient: self.model.pull_back(&g),
        })
    }
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Uniformly samples `count` distractors (all when `None`) from `db ∖ C`.
pub fn sample_distractors(
    db: &EmbeddingDatabase,
    candidates: &[CandidateId],
    count: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CandidateId>> {
    let pool: Vec<&CandidateId> = db.ids().iter().filter(|id| !candidates.contains(id)).collect();
    let n = count.unwrap_or(pool.len());
    if n > pool.len() {
        return Err(Error::Config(format!(
            "{n} distractors requested but only {} non-candidates exist",
            pool.len()
        )));
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn quantize_toward_zero(delta: &[f64]) -> Vec<f64> {
    delta.iter().map(|d| (d * 255.0).trunc() / 255.0).collect()
}

/// Sign-gradient PGD from `r = 0` on the full order loss. Distractors are
/// drawn once from `seed` and kept for every step.
pub fn pgd_attack(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q: &QueryImage,
    spec: &AttackSpec,
    pgd: &PgdConfig,
    cfg: &WhiteboxLossConfig,
    seed: u64,
) -> Result<AttackResult> {
    pgd_attack_observed(model, db, q, spec, pgd, cfg, seed, |_, _| {})
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pgd_attack_observed<F>(
    model: &RankingModel,
    db: &EmbeddingDatabase,
    q: &QueryImage,
    spec: &AttackSpec,
    pgd: &PgdConfig,
    cfg: &WhiteboxLossConfig,
    seed: u64,
    mut observe: F,
) -> Result<AttackResult>
where
    F: FnMut(usize, &Perturbation),
{
    check_dims(model, db, q.pixels())?;
    pgd.validate(spec.epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distractors = if cfg.xi != 0.0 {
        sample_distractors(db, spec.candidates(), cfg.distractor_count, &mut rng)?
    } else {
        Vec::new()
    };
    let loss = OrderLoss::new(model, db, spec, cfg, &distractors)?;
    let eps = spec.epsilon;

    let score = |r: &Perturbation| -> Result<(f64, Option<f64>)> {
        let ranking = rank(model, db, &q.perturbed(r), spec.visible_range)?;
        let tau = src(spec.candidates(), spec.permutation(), &ranking)?;
        Ok((tau, mean_rank(&ranking, spec.candidates())))
    };

    let mut r = Perturbation::zero(q.dim(), eps);
    observe(0, &r);
    let mut trace = Vec::with_capacity(pgd.steps + 1);
    trace.push(TracePoint {
        iteration: 0,
        queries: 0,
        tau_s: score(&r)?.0,
    });
    let mut raw = vec![0.0; q.dim()];
    for t in 1..=pgd.steps {
        let q_tilde = q.perturbed(&r);
        let g = loss.evaluate(q_tilde.pixels())?;
        for ((x, d), gi) in raw.iter_mut().zip(r.delta()).zip(&g.gradient) {
            *x = d - pgd.eta * sign(*gi);
        }
        r = clamp_to_feasible(q, &raw, eps)?;
        if pgd.quantize {
            r = clamp_to_feasible(q, &quantize_toward_zero(r.delta()), eps)?;
        }
        observe(t, &r);
        trace.push(TracePoint {
            iteration: t,
            queries: 0,
            tau_s: score(&r)?.0,
        });
    }
    let (tau_s, mr) = score(&r)?;
    Ok(AttackResult {
        perturbation: r,
        tau_s,
        mean_rank: mr,
        queries_used: 0,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Permutation, VisibleRange};
    use rand::Rng;

    fn identity_model(d: usize) -> RankingModel {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        RankingModel::new(d, d, w).unwrap()
    }

    /// Candidates on the first axis at the given distances from the origin query.
    fn on_axis(distances: &[f64]) -> (RankingModel, EmbeddingDatabase, Vec<CandidateId>) {
        let model = identity_model(2);
        let mut db = EmbeddingDatabase::new(2);
        let mut ids = Vec::new();
        for (i, d) in distances.iter().enumerate() {
            let id = CandidateId::new(format!("c{}", i + 1));
            db.push(id.clone(), None, vec![*d, 0.0]).unwrap();
            ids.push(id);
        }
        (model, db, ids)
    }

    #[test]
    fn satisfied_pair_has_zero_loss() {
        let (model, db, ids) = on_axis(&[0.2, 0.5]);
        let l = loss_reo(&model, &db, &[0.0, 0.0], &ids, 0.0).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn violated_pair_costs_the_gap() {
        let (model, db, ids) = on_axis(&[0.5, 0.2]);
        let l = loss_reo(&model, &db, &[0.0, 0.0], &ids, 0.0).unwrap();
        assert!((l.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn only_the_violated_pair_counts() {
        let (model, db, ids) = on_axis(&[0.1, 0.3, 0.2]);
        let l = loss_reo(&model, &db, &[0.0, 0.0], &ids, 0.0).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn margin_enters_the_hinge() {
        let (model, db, ids) = on_axis(&[0.2, 0.5]);
        let l = loss_reo(&model, &db, &[0.0, 0.0], &ids, 0.4).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_distance_uses_zero_subgradient() {
        let (model, db, ids) = on_axis(&[0.0, 0.0]);
        let l = loss_reo(&model, &db, &[0.0, 0.0], &ids, 0.1).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
        assert!(l.gradient.iter().all(|g| g.is_finite() && *g == 0.0));
    }

    #[test]
    fn qa_plus_examples() {
        let (model, db, ids) = on_axis(&[0.1, 0.2, 0.7, 0.9]);
        let c = &ids[..2];
        let x = &ids[2..];
        assert_eq!(loss_qa_plus(&model, &db, &[0.0, 0.0], c, x).unwrap().value, 0.0);
        let empty = loss_qa_plus(&model, &db, &[0.0, 0.0], c, &[]).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.gradient.iter().all(|&g| g == 0.0));

        let (model, db, ids) = on_axis(&[0.6, 0.4]);
        let l = loss_qa_plus(&model, &db, &[0.0, 0.0], &ids[..1], &ids[1..]).unwrap();
        assert!((l.value - 0.2).abs() < 1e-12);
        assert!(loss_qa_plus(&model, &db, &[0.0, 0.0], &ids, &ids[1..]).is_err());
    }

    #[test]
    fn oa_combines_linearly() {
        // reo = 0.1 from (0.1, 0.3, 0.2); qa = 0.02 from c at 0.3 vs distractor at 0.28
        let (model, db, ids) = on_axis(&[0.1, 0.3, 0.2, 0.28, 5.0]);
        let spec = AttackSpec::new(ids[..3].to_vec(), Permutation::identity(3), VisibleRange::Unbounded, 0.1, 10).unwrap();
        let distractors = ids[3..].to_vec();
        let q = [0.0, 0.0];
        let reo = loss_reo(&model, &db, &q, &ids[..3], 0.0).unwrap();
        let qa = loss_qa_plus(&model, &db, &q, &ids[..3], &distractors).unwrap();
        assert!((reo.value - 0.1).abs() < 1e-12);
        assert!((qa.value - 0.02).abs() < 1e-12);

        let cfg = WhiteboxLossConfig { xi: 10.0, ..Default::default() };
        let oa = loss_oa(&model, &db, &q, &spec, &cfg, &distractors).unwrap();
        assert!((oa.value - 0.3).abs() < 1e-12);
        for i in 0..2 {
            assert!((oa.gradient[i] - (reo.gradient[i] + 10.0 * qa.gradient[i])).abs() < 1e-12);
        }

        let zero = WhiteboxLossConfig::default();
        let oa0 = loss_oa(&model, &db, &q, &spec, &zero, &distractors).unwrap();
        assert_eq!(oa0, reo);
    }

    #[test]
    fn finite_differences_of_a_linear_function() {
        let a = [0.5, -2.0, 3.25];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(x, a)| x * a).sum::<f64>();
        let g = finite_difference_gradient(f, &[0.1, 0.2, 0.3], 1e-5);
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-8);
        }
    }

    #[test]
    fn pgd_with_zero_budget_keeps_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let model = identity_model(d);
        let mut db = EmbeddingDatabase::new(d);
        for i in 0..10 {
            db.push(CandidateId::new(format!("c{i}")), None, (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        }
        let q = QueryImage::new(vec![0.5; d]).unwrap();
        let clean = rank(&model, &db, &q, VisibleRange::Unbounded).unwrap();
        let spec = AttackSpec::new(clean.top(3).to_vec(), Permutation::new(vec![2, 0, 1]).unwrap(), VisibleRange::Unbounded, 0.0, 1).unwrap();
        let res = pgd_attack(&model, &db, &q, &spec, &PgdConfig::default(), &WhiteboxLossConfig::default(), 0).unwrap();
        assert!(res.perturbation.delta().iter().all(|&x| x == 0.0));
        assert_eq!(res.mean_rank, Some(1.0));
    }

    #[test]
    fn quantized_iterates_sit_on_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 8;
        let model = identity_model(d);
        let mut db = EmbeddingDatabase::new(d);
        for i in 0..12 {
            db.push(CandidateId::new(format!("c{i}")), None, (0..d).map(|_| rng.gen_range(0.3..0.7)).collect()).unwrap();
        }
        let q = QueryImage::new(vec![0.5; d]).unwrap();
        let clean = rank(&model, &db, &q, VisibleRange::Unbounded).unwrap();
        let spec = AttackSpec::new(clean.top(4).to_vec(), Permutation::new(vec![3, 2, 1, 0]).unwrap(), VisibleRange::Unbounded, 6.5 / 255.0, 1).unwrap();
        let pgd = PgdConfig { eta: 1.7 / 255.0, steps: 10, quantize: true };
        pgd_attack_observed(&model, &db, &q, &spec, &pgd, &WhiteboxLossConfig::default(), 1, |_, r| {
            for x in r.delta() {
                let s = x * 255.0;
                assert!((s - s.round()).abs() < 1e-9, "{x} is off the grid");
            }
            assert!(r.linf_norm() <= spec.epsilon);
        })
        .unwrap();
    }
    #[test]
    fn pgd_iterates_stay_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 16;
        let model = identity_model(d);
        let mut db = EmbeddingDatabase::new(d);
        for i in 0..30 {
            db.push(CandidateId::new(format!("c{i:02}")), None, (0..d).map(|_| rng.gen_range(-0.2..1.2)).collect()).unwrap();
        }
        // pixels on and near the image bounds
        let pixels: Vec<f64> = (0..d).map(|i| [0.0, 1.0, 0.01, 0.99][i % 4]).collect();
        let q = QueryImage::new(pixels).unwrap();
        let clean = rank(&model, &db, &q, VisibleRange::Unbounded).unwrap();
        let spec = AttackSpec::new(clean.top(5).to_vec(), Permutation::new(vec![4, 3, 2, 1, 0]).unwrap(), VisibleRange::Unbounded, 8.0 / 255.0, 1).unwrap();
        let cfg = WhiteboxLossConfig { xi: 10.0, ..Default::default() };
        let mut steps = 0;
        pgd_attack_observed(&model, &db, &q, &spec, &PgdConfig::default(), &cfg, 2, |_, r| {
            steps += 1;
            assert!(r.linf_norm() <= spec.epsilon + 1e-15);
            for (x, p) in r.delta().iter().zip(q.pixels()) {
                assert!((0.0..=1.0).contains(&(p + x)));
            }
        })
        .unwrap();
        assert_eq!(steps, 25);
    }

    #[test]
    fn pgd_swaps_a_feasible_pair() {
        let model = identity_model(2);
        let mut db = EmbeddingDatabase::new(2);
        let ids = [CandidateId::new("a"), CandidateId::new("b")];
        db.push(ids[0].clone(), None, vec![0.55, 0.5]).unwrap();
        db.push(ids[1].clone(), None, vec![0.42, 0.5]).unwrap();
        let q = QueryImage::new(vec![0.5, 0.5]).unwrap();
        let eps = 0.03;
        // want b before a
        let spec = AttackSpec::new(ids.to_vec(), Permutation::new(vec![1, 0]).unwrap(), VisibleRange::Unbounded, eps, 1).unwrap();
        let clean = rank(&model, &db, &q, VisibleRange::Unbounded).unwrap();
        assert_eq!(src(spec.candidates(), spec.permutation(), &clean).unwrap(), -1.0);

        let steps = 200;
        let feasible = (0..=steps).flat_map(|i| (0..=steps).map(move |j| (i, j))).any(|(i, j)| {
            let r = [eps * (2.0 * i as f64 / steps as f64 - 1.0), eps * (2.0 * j as f64 / steps as f64 - 1.0)];
            let p = clamp_to_feasible(&q, &r, eps).unwrap();
            let x = rank(&model, &db, &q.perturbed(&p), VisibleRange::Unbounded).unwrap();
            src(spec.candidates(), spec.permutation(), &x).unwrap() == 1.0
        });
        assert!(feasible);

        let res = pgd_attack(&model, &db, &q, &spec, &PgdConfig::default(), &WhiteboxLossConfig::default(), 0).unwrap();
        assert_eq!(res.tau_s, 1.0);
    }

    proptest::proptest! {
        #[test]
        fn zero_loss_iff_perfect_order(
            points in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 5),
            perm_seed in 0u64..1000,
        ) {
            let model = identity_model(2);
            let mut db = EmbeddingDatabase::new(2);
            let ids: Vec<CandidateId> = (0..5).map(|i| CandidateId::new(format!("c{i}"))).collect();
            for (id, (x, y)) in ids.iter().zip(&points) {
                db.push(id.clone(), None, vec![*x, *y]).unwrap();
            }
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            let mut idx: Vec<usize> = (0..5).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut prng);
            let spec = AttackSpec::new(ids.clone(), Permutation::new(idx).unwrap(), VisibleRange::Unbounded, 0.1, 1).unwrap();
            let q = [0.0, 0.0];
            let qi = QueryImage::clipped(q.to_vec());
            let dists: Vec<f64> = points.iter().map(|(x, y)| (x * x + y * y).sqrt()).collect();
            // exact distance ties make the two sides disagree by design (ranking tie-break vs hinge at 0)
            let mut sorted = dists.clone();
            sorted.sort_by(f64::total_cmp);
            proptest::prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
            let loss = loss_reo(&model, &db, &q, &spec.desired_order(), 0.0).unwrap();
            let ranking = rank(&model, &db, &qi, VisibleRange::Unbounded).unwrap();
            let tau = src(spec.candidates(), spec.permutation(), &ranking).unwrap();
            proptest::prop_assert_eq!(loss.value == 0.0, tau == 1.0);
        }
    }
}
