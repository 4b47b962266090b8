//! Lasso by cyclic coordinate descent.
//!
//! Solves `(1/2n) ||y - M b||^2 + lambda ||b||_1` with every column rescaled to
//! `||M_j||^2 = n`; coefficients are returned on the original column scale.
//! Exactly identical columns are merged before solving and share the merged
//! coefficient equally, so duplicated columns always get tied coefficients.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{KnockoffError, Result};
use crate::rng;

pub const TOLERANCE: f64 = 1e-7;
pub const MAX_PASSES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once the largest coordinate update in a pass is below this.
    pub tol: f64,
    pub max_passes: usize,
    /// Shuffle the coordinate order once with this seed; `None` keeps column order.
    pub permutation_seed: Option<u64>,
    /// Re-solve the stationarity equations on the final active set.
    pub polish: bool,
    /// Record the objective after every pass.
    pub track_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tol: TOLERANCE, max_passes: MAX_PASSES, permutation_seed: None, polish: true, track_objective: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub passes: usize,
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Per-column weights `||M_j|| / sqrt(n)`.
fn column_scales(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.norm() / n.sqrt()).collect()
}

/// Smallest `lambda` with an all-zero solution: `max_j |Z_j^T y| / n` over the
/// standardized columns `Z`.
pub fn lambda_max(m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = m.nrows() as f64;
    column_scales(m)
        .iter()
        .zip(m.column_iter())
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, c)| (c.dot(y) / s).abs() / n)
        .fold(0.0, f64::max)
}

/// Objective on the original scale, i.e. with penalty weights `||M_j|| / sqrt(n)`.
pub fn objective(m: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = m.nrows() as f64;
    let r = y - m * beta;
    let pen: f64 = column_scales(m).iter().zip(beta.iter()).map(|(s, b)| s * b.abs()).sum();
    r.norm_squared() / (2.0 * n) + lambda * pen
}

pub fn lasso_coordinate_descent(
    m: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let (n, cols) = m.shape();
    if n == 0 {
        return Err(KnockoffError::Invalid("lasso needs at least one observation".into()));
    }
    if y.len() != n {
        return Err(KnockoffError::Shape(format!("response has length {}, design has {n} rows", y.len())));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(KnockoffError::Invalid(format!("lambda = {lambda} must be positive")));
    }
    if m.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(KnockoffError::Invalid("non-finite entry in lasso input".into()));
    }
    let nf = n as f64;
    let scales = column_scales(m);

    let mut order: Vec<usize> = (0..cols).collect();
    if let Some(seed) = opts.permutation_seed {
        order.shuffle(&mut rng::seeded(seed));
    }

    // merge identical columns, first occurrence in solve order wins
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for &j in &order {
        if scales[j] == 0.0 {
            continue;
        }
        let key: Vec<u64> = m.column(j).iter().map(|v| (v + 0.0).to_bits()).collect();
        match seen.get(&key) {
            Some(&g) => groups[g].push(j),
            None => {
                seen.insert(key, groups.len());
                groups.push(vec![j]);
            }
        }
    }
    let u = groups.len();
    let mut z = DMatrix::zeros(n, u);
    for (k, g) in groups.iter().enumerate() {
        z.set_column(k, &(m.column(g[0]) / scales[g[0]]));
    }

    let mut gamma = DVector::<f64>::zeros(u);
    let mut r = y.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut passes = 0;
    let obj = |r: &DVector<f64>, g: &DVector<f64>| r.norm_squared() / (2.0 * nf) + lambda * g.lp_norm(1);
    if opts.track_objective {
        trace.push(obj(&r, &gamma));
    }
    while passes < opts.max_passes {
        passes += 1;
        let mut max_delta: f64 = 0.0;
        for k in 0..u {
            let zk = z.column(k);
            let rho = zk.dot(&r) / nf + gamma[k];
            let new = soft_threshold(rho, lambda);
            let d = new - gamma[k];
            if d != 0.0 {
                r.axpy(-d, &zk, 1.0);
                gamma[k] = new;
                max_delta = max_delta.max(d.abs());
            }
        }
        if opts.track_objective {
            trace.push(obj(&r, &gamma));
        }
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }

    if converged && opts.polish {
        if let Some(polished) = polish(&z, y, &gamma, lambda) {
            gamma = polished;
        }
    }

    let mut beta = DVector::zeros(cols);
    for (k, g) in groups.iter().enumerate() {
        let share = gamma[k] / g.len() as f64;
        for &j in g {
            beta[j] = share / scales[j];
        }
    }
    Ok(LassoFit { beta, lambda, converged, passes, objective_trace: trace })
}

/// Exact solution on the active set with fixed signs, kept only if it is
/// sign-consistent and satisfies the optimality conditions off the active set.
fn polish(z: &DMatrix<f64>, y: &DVector<f64>, gamma: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let nf = z.nrows() as f64;
    let active: Vec<usize> = (0..gamma.len()).filter(|&k| gamma[k] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let za = z.select_columns(&active);
    let signs = DVector::from_iterator(active.len(), active.iter().map(|&k| gamma[k].signum()));
    let gram = za.transpose() * &za / nf;
    let rhs = za.transpose() * y / nf - &signs * lambda;
    let sol = gram.cholesky()?.solve(&rhs);
    if sol.iter().zip(signs.iter()).any(|(v, s)| v * s <= 0.0) {
        return None;
    }
    let mut out = DVector::zeros(gamma.len());
    for (slot, &k) in active.iter().enumerate() {
        out[k] = sol[slot];
    }
    let r = y - z * &out;
    let slack = lambda * (1.0 + 1e-9) + 1e-12;
    for k in 0..gamma.len() {
        let g = z.column(k).dot(&r) / nf;
        if out[k] == 0.0 && g.abs() > slack {
            return None;
        }
    }
    Some(out)
}
