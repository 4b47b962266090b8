//! Monte Carlo summaries: means with standard errors and Wilson intervals.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// A Monte Carlo point estimate with its standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Estimate {
    /// Sample mean with a normal-approximation interval.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, se: 0.0, lower: 0.0, upper: 0.0, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, lower: mean - Z95 * se, upper: mean + Z95 * se, count: n }
    }

    /// Proportion with binomial standard error and a Wilson interval.
    pub fn proportion(successes: usize, n: usize) -> Self {
        if n == 0 {
            return Self { mean: 0.0, se: 0.0, lower: 0.0, upper: 1.0, count: 0 };
        }
        let phat = successes as f64 / n as f64;
        let se = (phat * (1.0 - phat) / n as f64).sqrt();
        let (lower, upper) = wilson_interval(successes, n, Z95);
        Self { mean: phat, se, lower, upper, count: n }
    }

    /// `mean <= target + k * se`.
    pub fn at_most(&self, target: f64, k: f64) -> bool {
        self.mean <= target + k * self.se
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let phat = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (phat + z2 / (2.0 * nf)) / denom;
    let half = z * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}
