use serde::{Deserialize, Serialize};

use crate::domain::project_into;
use crate::error::{Error, Result};

/// Channel-height-width layout of a flat query vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A `1×1×len` layout for vectors without image structure.
    pub const fn flat(len: usize) -> Self {
        Self::new(1, 1, len)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Nearest-neighbour upsampling of a CHW tensor to `target`, each output cell
/// copying source cell `⌊i · low / high⌋` along every axis.
pub fn expand_reduced(low: &[f64], from: Shape, target: Shape) -> Result<Vec<f64>> {
    if low.len() != from.len() {
        return Err(Error::DimensionMismatch {
            expected: from.len(),
            got: low.len(),
        });
    }
    if from.is_empty()
        || from.channels > target.channels
        || from.height > target.height
        || from.width > target.width
    {
        return Err(Error::Config(format!("cannot upsample {from} to {target}")));
    }
    if from == target {
        return Ok(low.to_vec());
    }
    let pick = |i: usize, lo: usize, hi: usize| i * lo / hi;
    let mut out = Vec::with_capacity(target.len());
    for c in 0..target.channels {
        let sc = pick(c, from.channels, target.channels);
        for h in 0..target.height {
            let sh = pick(h, from.height, target.height);
            let row = (sc * from.height + sh) * from.width;
            for w in 0..target.width {
                out.push(low[row + pick(w, from.width, target.width)]);
            }
        }
    }
    Ok(out)
}

/// Where the optimizers search: either the full query space or a coarser
/// grid that is upsampled before every evaluation.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    full: Shape,
    reduced: Option<Shape>,
    epsilon: f64,
}

impl SearchSpace {
    pub fn new(full: Shape, reduced: Option<Shape>, epsilon: f64) -> Result<Self> {
        if let Some(r) = reduced {
            // validates the shapes once
            expand_reduced(&vec![0.0; r.len()], r, full)?;
        }
        Ok(Self {
            full,
            reduced: reduced.filter(|r| *r != full),
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.reduced.unwrap_or(self.full).len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced.is_some()
    }

    pub fn expand(&self, low: &[f64]) -> Vec<f64> {
        match self.reduced {
            Some(r) => expand_reduced(low, r, self.full).expect("shape validated at construction"),
            None => low.to_vec(),
        }
    }

    /// Keeps a search-space vector feasible: exact `Ω_q` projection in the
    /// full space, the ε-box in a reduced one.
    pub fn project(&self, q: &[f64], r: &mut Vec<f64>) {
        if self.reduced.is_none() && q.len() == r.len() {
            let raw = std::mem::take(r);
            project_into(q, &raw, self.epsilon, r);
        } else {
            for x in r.iter_mut() {
                *x = if x.is_nan() { 0.0 } else { x.clamp(-self.epsilon, self.epsilon) };
            }
        }
    }
}
