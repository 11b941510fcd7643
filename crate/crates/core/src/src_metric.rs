//! Short-range ranking correlation (SRC, written τ_S) and Kendall's τ.
//!
//! τ_S scores every pair of selected candidates against a possibly truncated
//! ranking: +1 when the pair appears in the desired relative order, -1 when
//! it appears reversed, and -1 when either member is not visible at all. The
//! sum is divided by `k(k-1)/2`, so a fully satisfied order scores 1 and a
//! ranking where every candidate has vanished scores -1.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::domain::{CandidateId, Permutation, RankingList};
use crate::error::{Error, Result};

/// Strict lower-triangular pair scores, indexed in the desired order `C_p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreMatrix {
    k: usize,
    cells: Vec<i8>,
}

impl ScoreMatrix {
    fn zeros(k: usize) -> Self {
        Self {
            k,
            cells: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.cells[i * self.k + j]
    }

    fn set(&mut self, i: usize, j: usize, v: i8) {
        self.cells[i * self.k + j] = v;
    }

    pub fn sum(&self) -> i64 {
        self.cells.iter().map(|&v| v as i64).sum()
    }

    pub fn count(&self, value: i8) -> usize {
        let mut n = 0;
        for i in 0..self.k {
            for j in 0..i {
                if self.get(i, j) == value {
                    n += 1;
                }
            }
        }
        n
    }
}

pub(crate) fn pair_count(k: usize) -> usize {
    k * (k - 1) / 2
}

/// τ_S together with the per-pair scores.
pub fn compute_src(
    candidates: &[CandidateId],
    permutation: &Permutation,
    ranking: &RankingList,
) -> Result<(f64, ScoreMatrix)> {
    let k = candidates.len();
    if k < 2 {
        return Err(Error::TooFewCandidates(k));
    }
    if permutation.len() != k {
        return Err(Error::InvalidPermutation(format!(
            "permutation of length {} for {k} candidates",
            permutation.len()
        )));
    }

    // visible rank of each candidate, indexed by position in C_p
    let desired = permutation.apply(candidates);
    let slot: HashMap<&CandidateId, usize> =
        desired.iter().enumerate().map(|(i, c)| (c, i)).collect();
    if slot.len() != k {
        return Err(Error::InvalidSpec("candidate list contains duplicates".into()));
    }
    let mut visible = vec![None; k];
    let mut found = 0;
    for (rank, id) in ranking.entries().iter().enumerate() {
        if let Some(&i) = slot.get(id) {
            visible[i] = Some(rank);
            found += 1;
            if found == k {
                break;
            }
        }
    }

    let mut matrix = ScoreMatrix::zeros(k);
    for i in 1..k {
        for j in 0..i {
            let score = match (visible[i], visible[j]) {
                // C_p puts j before i, so the pair is concordant iff X does too
                (Some(ri), Some(rj)) if ri > rj => 1,
                // discordant, or at least one side out of range
                _ => -1,
            };
            matrix.set(i, j, score);
        }
    }
    let tau = matrix.sum() as f64 / pair_count(k) as f64;
    Ok((tau, matrix))
}

/// τ_S alone, for hot loops that do not need the matrix.
pub fn src(candidates: &[CandidateId], permutation: &Permutation, ranking: &RankingList) -> Result<f64> {
    compute_src(candidates, permutation, ranking).map(|(tau, _)| tau)
}

/// Kendall's τ between two orderings of the same items, without tie handling.
pub fn kendall_tau<T: Eq + Hash>(order_a: &[T], order_b: &[T]) -> Result<f64> {
    let k = order_a.len();
    if order_b.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: order_b.len(),
        });
    }
    if k < 2 {
        return Err(Error::TooFewCandidates(k));
    }
    let pos_b: HashMap<&T, usize> = order_b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    if pos_b.len() != k {
        return Err(Error::InvalidPermutation("second order has duplicates".into()));
    }
    let ranks: Vec<usize> = order_a
        .iter()
        .map(|x| {
            pos_b
                .get(x)
                .copied()
                .ok_or_else(|| Error::InvalidPermutation("orders contain different items".into()))
        })
        .collect::<Result<_>>()?;
    let mut score = 0i64;
    for i in 1..k {
        for j in 0..i {
            score += if ranks[i] > ranks[j] { 1 } else { -1 };
        }
    }
    Ok(score as f64 / pair_count(k) as f64)
}

/// Fraction of concordant pairs implied by a τ with no out-of-range pairs.
///
/// Solves `n_c - n_d = τ·P` and `n_c + n_d = P` for `n_c / P`.
pub fn concordant_fraction(tau_s: f64) -> f64 {
    (tau_s + 1.0) / 2.0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn ids(n: usize) -> Vec<CandidateId> {
        (1..=n).map(|i| CandidateId::new(format!("c{i}"))).collect()
    }

    /// Direct pair enumeration over the desired order, with linear rank lookup.
    pub(crate) fn brute_force_src(c: &[CandidateId], p: &[usize], x: &[CandidateId]) -> f64 {
        let k = c.len();
        let cp: Vec<&CandidateId> = p.iter().map(|&i| &c[i]).collect();
        let rank = |id: &CandidateId| x.iter().position(|e| e == id);
        let mut concordant = 0i64;
        let mut other = 0i64;
        for a in 0..k {
            for b in (a + 1)..k {
                match (rank(cp[a]), rank(cp[b])) {
                    (Some(ra), Some(rb)) if ra < rb => concordant += 1,
                    _ => other += 1,
                }
            }
        }
        (concordant - other) as f64 / (k * (k - 1) / 2) as f64
    }

    #[test]
    fn identity_order_scores_one() {
        let c = ids(5);
        let mut x = c.clone();
        x.extend((0..10).map(|i| CandidateId::new(format!("o{i}"))));
        let (tau, m) = compute_src(&c, &Permutation::identity(5), &RankingList::new(x).unwrap()).unwrap();
        assert_eq!(tau, 1.0);
        assert_eq!(m.count(1), 10);
    }

    #[test]
    fn all_absent_scores_minus_one() {
        let c = ids(4);
        let x: Vec<CandidateId> = (0..10).map(|i| CandidateId::new(format!("o{i}"))).collect();
        let tau = src(&c, &Permutation::new(vec![2, 0, 3, 1]).unwrap(), &RankingList::new(x).unwrap()).unwrap();
        assert_eq!(tau, -1.0);
    }

    #[test]
    fn reversed_tail_example() {
        let c = ids(5);
        let mut x = c.clone();
        x.push(CandidateId::new("o1"));
        let p = Permutation::from_one_based(&[1, 5, 4, 3, 2]).unwrap();
        let ranking = RankingList::new(x.clone()).unwrap();
        let (tau, m) = compute_src(&c, &p, &ranking).unwrap();
        let expected = brute_force_src(&c, p.as_slice(), &x);
        assert_eq!(expected, -0.2);
        assert_eq!(tau, expected);
        assert_eq!(m.count(1), 4);
        assert_eq!(m.count(-1), 6);
    }

    #[test]
    fn partially_visible_example() {
        let c = ids(3);
        let x = vec![c[1].clone(), c[0].clone()];
        let p = Permutation::from_one_based(&[2, 1, 3]).unwrap();
        let tau = src(&c, &p, &RankingList::new(x.clone()).unwrap()).unwrap();
        let expected = brute_force_src(&c, p.as_slice(), &x);
        assert!((expected + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tau, expected);
    }

    #[test]
    fn single_candidate_is_an_error() {
        let c = ids(1);
        let r = RankingList::new(c.clone()).unwrap();
        assert!(matches!(
            compute_src(&c, &Permutation::identity(1), &r),
            Err(Error::TooFewCandidates(1))
        ));
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&["a", "b", "c", "d"], &["d", "c", "b", "a"]).unwrap(), -1.0);
        let t = kendall_tau(&["a", "b", "c"], &["a", "c", "b"]).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&["a", "b"], &["a", "b", "c"]).is_err());
        assert!(kendall_tau(&["a", "b"], &["a", "x"]).is_err());
    }

    #[test]
    fn concordant_fraction_values() {
        assert_eq!(format!("{:.3}", concordant_fraction(0.286)), "0.643");
        assert_eq!(concordant_fraction(1.0), 1.0);
        assert_eq!(concordant_fraction(-1.0), 0.0);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<CandidateId>, Vec<usize>, Vec<CandidateId>) {
        let k = rng.gen_range(2..=8);
        let c = ids(k);
        let mut p: Vec<usize> = (0..k).collect();
        p.shuffle(rng);
        let mut pool: Vec<CandidateId> = c.clone();
        pool.extend((0..rng.gen_range(0..10)).map(|i| CandidateId::new(format!("o{i}"))));
        pool.shuffle(rng);
        let n = rng.gen_range(0..=pool.len());
        pool.truncate(n);
        (c, p, pool)
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (c, p, x) = random_instance(&mut rng);
            let perm = Permutation::new(p.clone()).unwrap();
            let tau = src(&c, &perm, &RankingList::new(x.clone()).unwrap()).unwrap();
            assert_eq!(tau, brute_force_src(&c, &p, &x));
        }
    }

    proptest! {
        #[test]
        fn degenerates_to_kendall_when_all_visible(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(2..=8);
            let c = ids(k);
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut rng);
            let mut x = c.clone();
            x.extend((0..5).map(|i| CandidateId::new(format!("o{i}"))));
            x.shuffle(&mut rng);
            let perm = Permutation::new(p).unwrap();
            let tau = src(&c, &perm, &RankingList::new(x.clone()).unwrap()).unwrap();
            let by_x: Vec<CandidateId> = x.iter().filter(|id| c.contains(id)).cloned().collect();
            prop_assert_eq!(tau, kendall_tau(&perm.apply(&c), &by_x).unwrap());
        }

        #[test]
        fn non_members_do_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, p, x) = random_instance(&mut rng);
            let perm = Permutation::new(p).unwrap();
            let base = src(&c, &perm, &RankingList::new(x.clone()).unwrap()).unwrap();
            // insert a fresh non-member anywhere
            let mut padded = x.clone();
            let at = rng.gen_range(0..=padded.len());
            padded.insert(at, CandidateId::new("intruder"));
            prop_assert_eq!(base, src(&c, &perm, &RankingList::new(padded).unwrap()).unwrap());
            // drop every non-member
            let members: Vec<CandidateId> = x.into_iter().filter(|id| c.contains(id)).collect();
            prop_assert_eq!(base, src(&c, &perm, &RankingList::new(members).unwrap()).unwrap());
        }

        #[test]
        fn removing_a_member_never_helps(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, p, x) = random_instance(&mut rng);
            let perm = Permutation::new(p).unwrap();
            let base = src(&c, &perm, &RankingList::new(x.clone()).unwrap()).unwrap();
            for victim in c.iter() {
                let reduced: Vec<CandidateId> = x.iter().filter(|id| *id != victim).cloned().collect();
                let tau = src(&c, &perm, &RankingList::new(reduced).unwrap()).unwrap();
                prop_assert!(tau <= base);
            }
        }

        #[test]
        fn tau_is_a_multiple_of_the_pair_unit(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, p, x) = random_instance(&mut rng);
            let perm = Permutation::new(p).unwrap();
            let (tau, m) = compute_src(&c, &perm, &RankingList::new(x).unwrap()).unwrap();
            let pairs = pair_count(c.len()) as f64;
            let scaled = tau * pairs;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&tau));
            for i in 0..m.k() {
                for j in i..m.k() {
                    prop_assert_eq!(m.get(i, j), 0);
                }
            }
        }
    }
}
