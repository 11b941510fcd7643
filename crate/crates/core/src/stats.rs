//! Small statistics helpers for reports and paired comparisons.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = mean(values);
        let stdev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(Summary {
            count: n,
            mean,
            stdev,
            min: sorted[0],
            max: sorted[n - 1],
            median,
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a − b) > 0`.
    pub p_greater: f64,
}

/// Paired t-test on `a − b`. With zero variance the p-value is 0 or 1
/// depending on the sign of the mean difference (0.5 when it is exactly 0).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = Summary::of(&diffs)?;
    let n = diffs.len() as f64;
    if s.stdev == 0.0 {
        let p = match s.mean.partial_cmp(&0.0)? {
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.5,
        };
        let t = if s.mean == 0.0 { 0.0 } else { s.mean.signum() * f64::INFINITY };
        return Some(PairedTest { mean_diff: s.mean, t, p_greater: p });
    }
    let t = s.mean / (s.stdev / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some(PairedTest {
        mean_diff: s.mean,
        t,
        p_greater: 1.0 - dist.cdf(t),
    })
}
