//! Value types shared by the oracle, the attacks and the experiment harness.
//!
//! Rank values are zero-based everywhere: the first entry of a ranking has
//! rank 0 and the k-th has rank k-1.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A flat query vector with every element in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QueryImage {
    pixels: Vec<f64>,
}

impl QueryImage {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidSpec("query image has no pixels".into()));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSpec(format!(
                "pixel {i} = {} is outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self { pixels })
    }

    /// Builds an image by clipping every element into `[0, 1]`. NaN maps to 0.
    pub fn clipped(mut pixels: Vec<f64>) -> Self {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    /// Returns `self + delta`, which stays in `[0, 1]` for any feasible perturbation.
    pub fn perturbed(&self, perturbation: &Perturbation) -> QueryImage {
        let pixels = self
            .pixels
            .iter()
            .zip(perturbation.delta())
            .map(|(q, r)| (q + r).clamp(0.0, 1.0))
            .collect();
        QueryImage { pixels }
    }
}

impl TryFrom<Vec<f64>> for QueryImage {
    type Error = Error;

    fn try_from(pixels: Vec<f64>) -> Result<Self> {
        QueryImage::new(pixels)
    }
}

impl From<QueryImage> for Vec<f64> {
    fn from(q: QueryImage) -> Self {
        q.pixels
    }
}

/// An additive perturbation inside `Ω_q = { r : q + r ∈ [0,1]^D, ‖r‖∞ ≤ ε }`.
///
/// Only [`clamp_to_feasible`] and [`Perturbation::zero`] construct one, so the
/// invariants hold for every value of this type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    delta: Vec<f64>,
    epsilon: f64,
}

impl Perturbation {
    pub fn zero(dim: usize, epsilon: f64) -> Self {
        Self {
            delta: vec![0.0; dim],
            epsilon,
        }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn into_delta(self) -> Vec<f64> {
        self.delta
    }
}

/// Projects `raw` onto `Ω_q`: the L∞ ball of radius `epsilon` intersected with
/// the box that keeps `q + r` inside `[0, 1]`.
pub fn clamp_to_feasible(q: &QueryImage, raw: &[f64], epsilon: f64) -> Result<Perturbation> {
    if raw.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: raw.len(),
        });
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    let mut delta = Vec::with_capacity(raw.len());
    project_into(q.pixels(), raw, epsilon, &mut delta);
    Ok(Perturbation { delta, epsilon })
}

/// Projection kernel shared with the optimizers' inner loops.
pub(crate) fn project_into(q: &[f64], raw: &[f64], epsilon: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(q.iter().zip(raw).map(|(&qi, &ri)| {
        let r = if ri.is_nan() { 0.0 } else { ri };
        r.clamp(-epsilon, epsilon).clamp(-qi, 1.0 - qi)
    }));
}

/// Opaque candidate identifier, unique within an embedding database.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateId(Arc<str>);

impl CandidateId {
    pub fn new(id: impl AsRef<str>) -> Self {
        Self(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CandidateId {
    fn from(s: &str) -> Self {
        CandidateId::new(s)
    }
}

impl Serialize for CandidateId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CandidateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(CandidateId::new(s))
    }
}

/// Length of the truncated ranking returned to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisibleRange {
    Top(usize),
    Unbounded,
}

impl VisibleRange {
    pub fn is_unbounded(self) -> bool {
        matches!(self, VisibleRange::Unbounded)
    }

    /// Number of entries to keep out of `available`.
    pub fn truncate_len(self, available: usize) -> usize {
        match self {
            VisibleRange::Top(n) => n.min(available),
            VisibleRange::Unbounded => available,
        }
    }
}

impl fmt::Display for VisibleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VisibleRange::Top(n) => write!(f, "{n}"),
            VisibleRange::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for VisibleRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unbounded" | "inf" | "infinity" | "∞" => Ok(VisibleRange::Unbounded),
            other => match other.parse::<usize>() {
                Ok(0) => Err(Error::Config("visible range must be positive".into())),
                Ok(n) => Ok(VisibleRange::Top(n)),
                Err(_) => Err(Error::Config(format!(
                    "visible range must be a positive integer or \"unbounded\", got {other:?}"
                ))),
            },
        }
    }
}

impl Serialize for VisibleRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            VisibleRange::Top(n) => s.serialize_u64(*n as u64),
            VisibleRange::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for VisibleRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("visible range must be positive")),
            Raw::Num(n) => Ok(VisibleRange::Top(n as usize)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A zero-based permutation of `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let k = indices.len();
        let mut seen = vec![false; k];
        for &i in &indices {
            if i >= k || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation(format!(
                    "{indices:?} is not a bijection on 0..{k}"
                )));
            }
        }
        Ok(Self(indices))
    }

    /// Builds from the one-based notation `[p1, ..., pk]`.
    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        let zero: Option<Vec<usize>> = indices.iter().map(|&i| i.checked_sub(1)).collect();
        match zero {
            Some(v) => Self::new(v),
            None => Err(Error::InvalidPermutation(format!(
                "{indices:?} contains 0 in one-based notation"
            ))),
        }
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `[items[p1], items[p2], ...]`: the order the attacker wants to see.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| items[i].clone()).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// What the attacker wants: candidates `C`, their desired order `p`, and the
/// constraints the attack runs under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSpec {
    candidates: Vec<CandidateId>,
    permutation: Permutation,
    pub visible_range: VisibleRange,
    pub epsilon: f64,
    pub query_budget: u64,
    pub margin_gamma: f64,
    pub xi: f64,
}

impl AttackSpec {
    pub fn new(
        candidates: Vec<CandidateId>,
        permutation: Permutation,
        visible_range: VisibleRange,
        epsilon: f64,
        query_budget: u64,
    ) -> Result<Self> {
        let k = candidates.len();
        if permutation.len() != k {
            return Err(Error::InvalidSpec(format!(
                "permutation has length {} but there are {k} candidates",
                permutation.len()
            )));
        }
        if let VisibleRange::Top(n) = visible_range {
            if k > n {
                return Err(Error::InvalidSpec(format!(
                    "k = {k} exceeds the visible range N = {n}"
                )));
            }
        }
        let unique: HashSet<&CandidateId> = candidates.iter().collect();
        if unique.len() != k {
            return Err(Error::InvalidSpec("candidate list contains duplicates".into()));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidSpec(format!("invalid epsilon {epsilon}")));
        }
        if query_budget == 0 {
            return Err(Error::InvalidSpec("query budget must be positive".into()));
        }
        Ok(Self {
            candidates,
            permutation,
            visible_range,
            epsilon,
            query_budget,
            margin_gamma: 0.0,
            xi: 0.0,
        })
    }

    pub fn with_margin(mut self, gamma: f64) -> Self {
        self.margin_gamma = gamma;
        self
    }

    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    pub fn candidates(&self) -> &[CandidateId] {
        &self.candidates
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    /// Candidates listed in the attacker's desired order.
    pub fn desired_order(&self) -> Vec<CandidateId> {
        self.permutation.apply(&self.candidates)
    }
}

/// An ordered, duplicate-free, possibly truncated ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingList {
    entries: Vec<CandidateId>,
}

impl RankingList {
    pub fn new(entries: Vec<CandidateId>) -> Result<Self> {
        let unique: HashSet<&CandidateId> = entries.iter().collect();
        if unique.len() != entries.len() {
            return Err(Error::Schema("ranking contains duplicate ids".into()));
        }
        Ok(Self { entries })
    }

    /// Skips the duplicate check; callers guarantee uniqueness.
    pub(crate) fn from_unique(entries: Vec<CandidateId>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[CandidateId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Zero-based rank of `id`, if it is visible.
    pub fn rank_of(&self, id: &CandidateId) -> Option<usize> {
        self.entries.iter().position(|e| e == id)
    }

    pub fn top(&self, k: usize) -> &[CandidateId] {
        &self.entries[..k.min(self.entries.len())]
    }
}

/// Average zero-based rank of `candidates` in `ranking`.
///
/// `None` means a candidate fell out of a bounded visible range. With an
/// unbounded range every candidate is present by construction; a missing one
/// is still reported as `None`.
pub fn mean_rank(ranking: &RankingList, candidates: &[CandidateId]) -> Option<f64> {
    if candidates.is_empty() {
        return None;
    }
    let mut positions: std::collections::HashMap<&CandidateId, usize> =
        candidates.iter().map(|c| (c, usize::MAX)).collect();
    for (rank, id) in ranking.entries().iter().enumerate() {
        if let Some(slot) = positions.get_mut(id) {
            *slot = rank;
        }
    }
    let mut total = 0usize;
    for c in candidates {
        let r = positions[c];
        if r == usize::MAX {
            return None;
        }
        total += r;
    }
    Some(total as f64 / candidates.len() as f64)
}

/// One entry of an optimizer's progress trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub queries: u64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    pub perturbation: Perturbation,
    pub tau_s: f64,
    /// `None` when a candidate left a bounded visible range.
    pub mean_rank: Option<f64>,
    pub queries_used: u64,
    pub trace: Vec<TracePoint>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<CandidateId> {
        names.iter().map(|s| CandidateId::new(s)).collect()
    }

    #[test]
    fn zero_raw_is_feasible() {
        let q = QueryImage::new(vec![0.5; 8]).unwrap();
        let p = clamp_to_feasible(&q, &[0.0; 8], 4.0 / 255.0).unwrap();
        assert!(p.delta().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn linf_ball_dominates() {
        let q = QueryImage::new(vec![0.5; 8]).unwrap();
        let eps = 4.0 / 255.0;
        let p = clamp_to_feasible(&q, &[1.0; 8], eps).unwrap();
        assert!(p.delta().iter().all(|&d| d == eps));
    }

    #[test]
    fn image_bounds_clip_at_the_edges() {
        let q = QueryImage::new(vec![0.0, 1.0]).unwrap();
        let eps = 8.0 / 255.0;
        let p = clamp_to_feasible(&q, &[-0.01, 0.01], eps).unwrap();
        assert_eq!(p.delta(), &[0.0, 0.0]);

        // brute-force projection: nearest feasible grid point per coordinate
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * eps / 400.0).collect();
        for (i, (&qi, &ri)) in q.pixels().iter().zip(&[-0.01, 0.01]).enumerate() {
            let best = grid
                .iter()
                .copied()
                .filter(|r| (0.0..=1.0).contains(&(qi + r)))
                .min_by(|a, b| (a - ri).abs().partial_cmp(&(b - ri).abs()).unwrap())
                .unwrap();
            assert!((best - p.delta()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_rejects_dimension_mismatch() {
        let q = QueryImage::new(vec![0.5; 3]).unwrap();
        assert!(matches!(
            clamp_to_feasible(&q, &[0.0; 4], 0.1),
            Err(Error::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn query_image_rejects_out_of_range() {
        assert!(QueryImage::new(vec![0.2, 1.5]).is_err());
        assert!(QueryImage::new(vec![]).is_err());
    }

    #[test]
    fn mean_rank_examples() {
        let ranking = RankingList::new(ids(&["a", "b", "c", "d", "e", "f", "g", "h"])).unwrap();
        assert_eq!(mean_rank(&ranking, &ids(&["a", "b", "c", "d", "e"])), Some(2.0));
        assert_eq!(mean_rank(&ranking, &ids(&["h"])), Some(7.0));
        assert_eq!(mean_rank(&ranking, &ids(&["a", "zz"])), None);

        let many: Vec<String> = (0..40).map(|i| format!("c{i}")).collect();
        let ranking = RankingList::new(many.iter().map(CandidateId::new).collect()).unwrap();
        assert_eq!(mean_rank(&ranking, &ranking.top(25).to_vec()), Some(12.0));
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::from_one_based(&[1, 5, 4, 3, 2]).is_ok());
        assert!(Permutation::from_one_based(&[1, 1, 2]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        let p = Permutation::from_one_based(&[2, 1, 3]).unwrap();
        assert_eq!(p.apply(&["x", "y", "z"]), vec!["y", "x", "z"]);
    }

    #[test]
    fn attack_spec_invariants() {
        let c = ids(&["a", "b", "c"]);
        let p = Permutation::identity(3);
        assert!(AttackSpec::new(c.clone(), p.clone(), VisibleRange::Top(2), 0.1, 10).is_err());
        assert!(AttackSpec::new(ids(&["a", "a", "b"]), p.clone(), VisibleRange::Unbounded, 0.1, 10).is_err());
        assert!(AttackSpec::new(c.clone(), Permutation::identity(2), VisibleRange::Unbounded, 0.1, 10).is_err());
        let spec = AttackSpec::new(c, p, VisibleRange::Top(3), 0.1, 10).unwrap();
        assert_eq!(spec.margin_gamma, 0.0);
    }

    #[test]
    fn visible_range_parsing() {
        assert_eq!("50".parse::<VisibleRange>().unwrap(), VisibleRange::Top(50));
        assert_eq!("unbounded".parse::<VisibleRange>().unwrap(), VisibleRange::Unbounded);
        assert!("0".parse::<VisibleRange>().is_err());
        let json = serde_json::to_string(&VisibleRange::Unbounded).unwrap();
        assert_eq!(serde_json::from_str::<VisibleRange>(&json).unwrap(), VisibleRange::Unbounded);
        assert_eq!(serde_json::from_str::<VisibleRange>("7").unwrap(), VisibleRange::Top(7));
    }

    fn image_and_raw() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (1usize..16).prop_flat_map(|d| {
            (
                prop::collection::vec(0.0f64..=1.0, d),
                prop::collection::vec(-2.0f64..2.0, d),
                0.0f64..0.5,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn clamp_is_feasible_and_idempotent((q, raw, eps) in image_and_raw()) {
            let q = QueryImage::new(q).unwrap();
            let once = clamp_to_feasible(&q, &raw, eps).unwrap();
            prop_assert!(once.linf_norm() <= eps);
            for (qi, di) in q.pixels().iter().zip(once.delta()) {
                prop_assert!((0.0..=1.0).contains(&(qi + di)));
            }
            let twice = clamp_to_feasible(&q, once.delta(), eps).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn top_k_mean_rank_is_half_k_minus_one(n in 1usize..60, k in 1usize..60) {
            let k = k.min(n);
            let entries: Vec<CandidateId> = (0..n).map(|i| CandidateId::new(format!("id{i}"))).collect();
            let ranking = RankingList::new(entries).unwrap();
            let c = ranking.top(k).to_vec();
            prop_assert_eq!(mean_rank(&ranking, &c), Some((k as f64 - 1.0) / 2.0));
        }
    }
}
