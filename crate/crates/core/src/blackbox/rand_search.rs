use rand::Rng;

use super::{uniform_in_box, SearchObjective};
use crate::error::Result;

/// One candidate of naive random search: every element i.i.d. on `[−ε, ε]`.
pub fn sample_uniform(dim: usize, epsilon: f64, rng: &mut impl Rng) -> Vec<f64> {
    uniform_in_box(dim, epsilon, rng)
}

/// Naive random search. Candidates are independent; the session keeps the best.
#[derive(Debug, Clone)]
pub struct RandSearch {
    batch: usize,
}

impl RandSearch {
    pub fn new(batch: usize) -> Self {
        Self { batch: batch.max(1) }
    }

    /// Evaluates one batch; `false` once the budget ran out.
    pub fn step(&mut self, obj: &mut dyn SearchObjective, rng: &mut impl Rng) -> Result<bool> {
        for _ in 0..self.batch {
            let mut r = sample_uniform(obj.dim(), obj.epsilon(), rng);
            obj.project(&mut r);
            if obj.evaluate(&r)?.is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Asymptotic Kolmogorov-Smirnov p-value for a sample against U(lo, hi).
    fn ks_uniform_p(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
        }
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let mut p = 0.0;
        for j in 1..=100 {
            let j = j as f64;
            p += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn samples_are_uniform_on_the_box() {
        let eps = 4.0 / 255.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = sample_uniform(100_000, eps, &mut rng);
        assert!(xs.iter().all(|x| x.abs() <= eps));
        let p = ks_uniform_p(xs, -eps, eps);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn ks_helper_rejects_a_shifted_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.1..1.0)).collect();
        assert!(ks_uniform_p(xs, 0.0, 1.0) < 1e-6);
    }

    #[test]
    fn zero_epsilon_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_uniform(64, 0.0, &mut rng).iter().all(|&x| x == 0.0));
    }
}
