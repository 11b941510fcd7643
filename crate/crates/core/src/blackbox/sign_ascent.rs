use rand::Rng;
use rand_distr::StandardNormal;

use super::SearchObjective;
use crate::error::Result;

/// How antithetic probes are drawn around the current center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    /// `u ~ N(0, I)`, probes at `center ± σu` (NES).
    Gaussian { sigma: f64 },
    /// `u ∈ {−1, 1}^D`, probes at `center ± δu` (SPSA).
    Rademacher { delta: f64 },
}

impl Probe {
    pub fn scale(self) -> f64 {
        match self {
            Probe::Gaussian { sigma } => sigma,
            Probe::Rademacher { delta } => delta,
        }
    }

    pub fn direction(self, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Probe::Gaussian { .. } => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            Probe::Rademacher { .. } => (0..dim).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect(),
        }
    }
}

/// `ĝ = 1/(H·s) · Σ (f(c + s·u) − f(c − s·u)) · u` over `pairs` antithetic
/// pairs (`H = 2·pairs`). `None` if the budget ran out part way.
pub fn estimate_gradient(
    obj: &mut dyn SearchObjective,
    center: &[f64],
    pairs: usize,
    probe: Probe,
    rng: &mut impl Rng,
) -> Result<Option<Vec<f64>>> {
    let s = probe.scale();
    let mut grad = vec![0.0; center.len()];
    for _ in 0..pairs {
        let u = probe.direction(center.len(), rng);
        let mut plus: Vec<f64> = center.iter().zip(&u).map(|(c, u)| c + s * u).collect();
        let mut minus: Vec<f64> = center.iter().zip(&u).map(|(c, u)| c - s * u).collect();
        obj.project(&mut plus);
        obj.project(&mut minus);
        let Some(f_plus) = obj.evaluate(&plus)? else {
            return Ok(None);
        };
        let Some(f_minus) = obj.evaluate(&minus)? else {
            return Ok(None);
        };
        let diff = f_plus - f_minus;
        if diff != 0.0 {
            grad.iter_mut().zip(&u).for_each(|(g, u)| *g += diff * u);
        }
    }
    let norm = 1.0 / (2.0 * pairs as f64 * s);
    grad.iter_mut().for_each(|g| *g *= norm);
    Ok(Some(grad))
}

/// Projected sign ascent on an estimated gradient (NES and SPSA).
#[derive(Debug, Clone)]
pub struct SignAscent {
    center: Vec<f64>,
    pairs: usize,
    lr: f64,
    probe: Probe,
}

impl SignAscent {
    pub fn new(start: Vec<f64>, pairs: usize, lr: f64, probe: Probe) -> Self {
        Self {
            center: start,
            pairs: pairs.max(1),
            lr,
            probe,
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// One estimate and one step of size η; `false` once the budget ran out.
    pub fn step(&mut self, obj: &mut dyn SearchObjective, rng: &mut impl Rng) -> Result<bool> {
        let Some(grad) = estimate_gradient(obj, &self.center, self.pairs, self.probe, rng)? else {
            return Ok(false);
        };
        for (c, g) in self.center.iter_mut().zip(&grad) {
            // sign(0) = 0
            if *g != 0.0 {
                *c += self.lr * g.signum();
            }
        }
        obj.project(&mut self.center);
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fn<F> {
        f: F,
        dim: usize,
        eps: f64,
        seen: Vec<Vec<f64>>,
    }

    impl<F: FnMut(&[f64]) -> f64> SearchObjective for Fn<F> {
        fn dim(&self) -> usize {
            self.dim
        }
        fn epsilon(&self) -> f64 {
            self.eps
        }
        fn project(&self, r: &mut Vec<f64>) {
            r.iter_mut().for_each(|x| *x = x.clamp(-self.eps, self.eps));
        }
        fn evaluate(&mut self, r: &[f64]) -> Result<Option<f64>> {
            self.seen.push(r.to_vec());
            Ok(Some((self.f)(r)))
        }
    }

    fn objective<F: FnMut(&[f64]) -> f64>(dim: usize, eps: f64, f: F) -> Fn<F> {
        Fn { f, dim, eps, seen: Vec::new() }
    }

    #[test]
    fn recovers_the_sign_of_a_linear_objective() {
        for probe in [Probe::Gaussian { sigma: 0.01 }, Probe::Rademacher { delta: 0.01 }] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut hits = 0;
            let trials = 1000;
            for _ in 0..trials {
                let mut obj = objective(2, 1.0, |r: &[f64]| r[0] - r[1]);
                let g = estimate_gradient(&mut obj, &[0.0, 0.0], 25, probe, &mut rng).unwrap().unwrap();
                if g[0] > 0.0 && g[1] < 0.0 {
                    hits += 1;
                }
            }
            assert!(hits as f64 / trials as f64 > 0.99, "{probe:?}: {hits}/{trials}");
        }
    }

    #[test]
    fn constant_objective_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for probe in [Probe::Gaussian { sigma: 0.03 }, Probe::Rademacher { delta: 0.01 }] {
            let mut obj = objective(32, 0.1, |_: &[f64]| 0.4);
            let g = estimate_gradient(&mut obj, &vec![0.0; 32], 25, probe, &mut rng).unwrap().unwrap();
            assert!(g.iter().all(|&x| x == 0.0));
            let mut opt = SignAscent::new(vec![0.0; 32], 25, 0.01, probe);
            opt.step(&mut obj, &mut rng).unwrap();
            assert!(opt.center().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn rademacher_probes_sit_exactly_delta_away() {
        let delta = 2.0 / 255.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut obj = objective(64, 1.0, |_: &[f64]| 0.0);
        estimate_gradient(&mut obj, &vec![0.0; 64], 10, Probe::Rademacher { delta }, &mut rng).unwrap();
        assert_eq!(obj.seen.len(), 20);
        assert!(obj.seen.iter().flatten().all(|x| x.abs() == delta));
    }

    #[test]
    fn converges_on_a_concave_toy_problem() {
        let target = [0.02, -0.01, 0.005, -0.03];
        let lr = 0.002;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut obj = objective(4, 0.05, |r: &[f64]| -r.iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum::<f64>());
        let mut opt = SignAscent::new(vec![0.0; 4], 25, lr, Probe::Gaussian { sigma: 0.001 });
        for _ in 0..100 {
            opt.step(&mut obj, &mut rng).unwrap();
        }
        for (c, t) in opt.center().iter().zip(&target) {
            assert!((c - t).abs() <= 2.0 * lr, "{c} vs {t}");
        }
    }
}
