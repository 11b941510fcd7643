use rand::Rng;

use super::{uniform_in_box, PsoConfig, SearchObjective};
use crate::error::Result;

/// `v ← ω·v + φp·r1·(p − y) + φg·r2·(g − y)`, in place.
#[allow(clippy::too_many_arguments)]
pub fn velocity_update(
    v: &mut [f64],
    y: &[f64],
    p: &[f64],
    g: &[f64],
    omega: f64,
    phi_p: f64,
    phi_g: f64,
    r1: f64,
    r2: f64,
) {
    for i in 0..v.len() {
        v[i] = omega * v[i] + phi_p * r1 * (p[i] - y[i]) + phi_g * r2 * (g[i] - y[i]);
    }
}

#[derive(Debug, Clone)]
struct Particle {
    position: Vec<f64>,
    velocity: Vec<f64>,
    best: Vec<f64>,
    best_score: f64,
}

/// Particle swarm over the search space.
#[derive(Debug, Clone)]
pub struct Swarm {
    particles: Vec<Particle>,
    global: Vec<f64>,
    global_score: f64,
    cfg: PsoConfig,
}

impl Swarm {
    /// Scatters the swarm uniformly and evaluates every particle once. The
    /// global best starts at `start` with score `baseline`. `None` if the
    /// budget ran out before the whole swarm was scored.
    pub fn init(
        obj: &mut dyn SearchObjective,
        cfg: &PsoConfig,
        start: Vec<f64>,
        baseline: f64,
        rng: &mut impl Rng,
    ) -> Result<Option<Swarm>> {
        let mut swarm = Swarm {
            particles: Vec::with_capacity(cfg.swarm),
            global: start,
            global_score: baseline,
            cfg: *cfg,
        };
        for _ in 0..cfg.swarm {
            let mut position = uniform_in_box(obj.dim(), obj.epsilon(), rng);
            obj.project(&mut position);
            let Some(score) = obj.evaluate(&position)? else {
                return Ok(None);
            };
            if score > swarm.global_score {
                swarm.global_score = score;
                swarm.global.clone_from(&position);
            }
            swarm.particles.push(Particle {
                velocity: vec![0.0; position.len()],
                best: position.clone(),
                best_score: score,
                position,
            });
        }
        Ok(Some(swarm))
    }

    pub fn global_best(&self) -> (&[f64], f64) {
        (&self.global, self.global_score)
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.particles.iter().map(|p| p.position.as_slice())
    }

    /// Moves and rescores every particle; `false` once the budget ran out.
    pub fn step(&mut self, obj: &mut dyn SearchObjective, rng: &mut impl Rng) -> Result<bool> {
        let PsoConfig { omega, phi_p, phi_g, .. } = self.cfg;
        for particle in &mut self.particles {
            let (r1, r2) = (rng.gen::<f64>(), rng.gen::<f64>());
            velocity_update(
                &mut particle.velocity,
                &particle.position,
                &particle.best,
                &self.global,
                omega,
                phi_p,
                phi_g,
                r1,
                r2,
            );
            for (y, v) in particle.position.iter_mut().zip(&particle.velocity) {
                *y += v;
            }
            obj.project(&mut particle.position);
            let Some(score) = obj.evaluate(&particle.position)? else {
                return Ok(false);
            };
            if score > particle.best_score {
                particle.best_score = score;
                particle.best.clone_from(&particle.position);
            }
            if score > self.global_score {
                self.global_score = score;
                self.global.clone_from(&particle.position);
            }
        }
        Ok(true)
    }
}
