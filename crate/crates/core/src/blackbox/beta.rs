//! Beta-distribution search: perturbations `r = ε(2z − 1)` with independent
//! `z_i ~ Beta(a_i, b_i)`, where `(a, b)` follow a score-function estimate of
//! the gradient of the expected τ_S.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::digamma;

use super::SearchObjective;
use crate::error::Result;

/// Smallest value `a` and `b` may take; keeps the digamma terms finite.
pub const BETA_PARAM_FLOOR: f64 = 1e-3;

const Z_GUARD: f64 = 1e-12;

/// `(∂/∂a, ∂/∂b) log Beta(z | a, b)`.
pub fn beta_score(a: f64, b: f64, z: f64) -> (f64, f64) {
    score_from(digamma_terms(a, b), z)
}

/// `(ψ(a+b) − ψ(a), ψ(a+b) − ψ(b))`, the part of the score that does not depend on `z`.
fn digamma_terms(a: f64, b: f64) -> (f64, f64) {
    let common = digamma(a + b);
    (common - digamma(a), common - digamma(b))
}

fn score_from((ta, tb): (f64, f64), z: f64) -> (f64, f64) {
    let z = z.clamp(Z_GUARD, 1.0 - Z_GUARD);
    (ta + z.ln(), tb + (1.0 - z).ln())
}

#[derive(Debug, Clone)]
pub struct BetaAttack {
    a: Vec<f64>,
    b: Vec<f64>,
    batch: usize,
    lr: f64,
}

impl BetaAttack {
    /// Starts from `a = b = 1`, i.e. the uniform distribution.
    pub fn new(dim: usize, batch: usize, lr: f64) -> Self {
        Self {
            a: vec![1.0; dim],
            b: vec![1.0; dim],
            batch: batch.max(1),
            lr,
        }
    }

    pub fn params(&self) -> (&[f64], &[f64]) {
        (&self.a, &self.b)
    }

    #[cfg(test)]
    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.sample_from(&self.distributions(), rng)
    }

    /// `None` marks `a = b = 1`, sampled directly as a uniform.
    fn distributions(&self) -> Vec<Option<Beta<f64>>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| if a == 1.0 && b == 1.0 { None } else { Beta::new(a, b).ok() })
            .collect()
    }

    fn sample_from(&self, dists: &[Option<Beta<f64>>], rng: &mut impl Rng) -> Vec<f64> {
        dists
            .iter()
            .map(|d| match d {
                Some(d) => d.sample(rng),
                None => rng.gen::<f64>(),
            })
            .collect()
    }

    /// Draws a batch, evaluates it, and takes one ascent step on `(a, b)`.
    /// Returns `false` (without updating) once the budget ran out.
    pub fn step(&mut self, obj: &mut dyn SearchObjective, rng: &mut impl Rng) -> Result<bool> {
        let eps = obj.epsilon();
        let dim = self.a.len();
        let mut grad_a = vec![0.0; dim];
        let mut grad_b = vec![0.0; dim];
        let terms: Vec<(f64, f64)> = if self.lr != 0.0 {
            self.a.iter().zip(&self.b).map(|(&a, &b)| digamma_terms(a, b)).collect()
        } else {
            Vec::new()
        };
        let dists = self.distributions();
        for _ in 0..self.batch {
            let z = self.sample_from(&dists, rng);
            let mut r: Vec<f64> = z.iter().map(|z| eps * (2.0 * z - 1.0)).collect();
            obj.project(&mut r);
            let Some(score) = obj.evaluate(&r)? else {
                return Ok(false);
            };
            if score != 0.0 && self.lr != 0.0 {
                for i in 0..dim {
                    let (da, db) = score_from(terms[i], z[i]);
                    grad_a[i] += score * da;
                    grad_b[i] += score * db;
                }
            }
        }
        if self.lr != 0.0 {
            let scale = self.lr / self.batch as f64;
            for i in 0..dim {
                self.a[i] = (self.a[i] + scale * grad_a[i]).max(BETA_PARAM_FLOOR);
                self.b[i] = (self.b[i] + scale * grad_b[i]).max(BETA_PARAM_FLOOR);
            }
        }
        Ok(true)
    }
}
