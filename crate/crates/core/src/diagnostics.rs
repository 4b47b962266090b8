//! Observed-KL diagnostic and the bounds built on it.
//!
//! For each feature the diagnostic sums, over observations, the log of
//! `P_j(x_ij) Q_j(xt_ij) / (Q_j(x_ij) P_j(xt_ij))` with both conditionals
//! evaluated at the original `x_{i,-j}`. It needs the true conditionals `P_j`,
//! so it is only available in simulation or against a supplied reference model.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{KnockoffError, Result};
use crate::gaussian::{ConditionalGaussian, GaussianModel, PrecisionEstimate};
use crate::linalg;
use crate::mc::{wilson_interval, Z95};
use crate::FeatureMatrix;

/// Per-feature conditional log-density (or log-pmf) of `x_j` given `x_{-j}`.
pub trait ConditionalLogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density of `x_j = value` given the other entries of `row`.
    fn log_density(&self, j: usize, value: f64, row: &[f64]) -> f64;

    /// Column-at-a-time version: `values[i]` is evaluated against row `i` of `x`.
    fn log_densities(&self, j: usize, values: &[f64], x: &FeatureMatrix) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = x[(i, k)];
                }
                self.log_density(j, v, &row)
            })
            .collect()
    }
}

/// Gaussian conditionals read off a precision matrix (true or estimated).
#[derive(Debug, Clone)]
pub struct GaussianConditionals {
    conds: Vec<ConditionalGaussian>,
    // column j holds the regression coefficients of x_j with a 0 at row j
    coef: DMatrix<f64>,
}

impl GaussianConditionals {
    pub fn new(theta: &DMatrix<f64>) -> Result<Self> {
        let p = theta.nrows();
        let conds = (0..p).map(|j| ConditionalGaussian::of(theta, j)).collect::<Result<Vec<_>>>()?;
        let mut coef = DMatrix::zeros(p, p);
        for (j, c) in conds.iter().enumerate() {
            for (slot, k) in (0..p).filter(|&k| k != j).enumerate() {
                coef[(k, j)] = c.coeffs[slot];
            }
        }
        Ok(Self { conds, coef })
    }

    pub fn from_model(model: &GaussianModel) -> Result<Self> {
        Self::new(model.precision())
    }

    pub fn from_estimate(est: &PrecisionEstimate) -> Result<Self> {
        Self::new(est.matrix())
    }

    pub fn conditional(&self, j: usize) -> &ConditionalGaussian {
        &self.conds[j]
    }

    /// Conditional means of every feature for every row: `x * coef`.
    pub fn means(&self, x: &FeatureMatrix) -> DMatrix<f64> {
        x * &self.coef
    }

    fn means_for(&self, j: usize, x: &FeatureMatrix) -> DVector<f64> {
        x * self.coef.column(j)
    }
}

impl ConditionalLogDensity for GaussianConditionals {
    fn dim(&self) -> usize {
        self.conds.len()
    }

    fn log_density(&self, j: usize, value: f64, row: &[f64]) -> f64 {
        let c = &self.conds[j];
        c.log_density(value, c.mean(row))
    }

    fn log_densities(&self, j: usize, values: &[f64], x: &FeatureMatrix) -> Vec<f64> {
        let c = &self.conds[j];
        let means = self.means_for(j, x);
        values.iter().zip(means.iter()).map(|(&v, &m)| c.log_density(v, m)).collect()
    }
}

/// Evaluator for the conditionals implied by `theta`.
pub fn gaussian_conditional_evaluator(theta: &DMatrix<f64>) -> Result<GaussianConditionals> {
    GaussianConditionals::new(theta)
}

/// Observed-KL statistics for one data set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlDiagnostics {
    pub kl_hat: Vec<f64>,
    pub max_kl: f64,
    #[serde(serialize_with = "serialize_rows")]
    pub per_observation_terms: DMatrix<f64>,
}

fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl KlDiagnostics {
    /// `sign(W_j) * KL_j`, the value seen once the pair is labelled by the sign of W.
    pub fn signed_by(&self, w: &[f64]) -> Vec<f64> {
        self.kl_hat.iter().zip(w).map(|(&k, &wj)| sign(wj) * k).collect()
    }

    /// Max over the given feature subset (e.g. the nulls); `-inf` when empty.
    pub fn max_over(&self, features: &[usize]) -> f64 {
        features.iter().map(|&j| self.kl_hat[j]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(x: &FeatureMatrix, xt: &FeatureMatrix, pc: &dyn ConditionalLogDensity, qc: &dyn ConditionalLogDensity) -> Result<()> {
    if x.shape() != xt.shape() {
        return Err(KnockoffError::Shape(format!(
            "features {:?} and knockoffs {:?} differ in shape",
            x.shape(),
            xt.shape()
        )));
    }
    if pc.dim() != x.ncols() || qc.dim() != x.ncols() {
        return Err(KnockoffError::Shape("conditional models do not match feature count".into()));
    }
    Ok(())
}

fn column_terms(
    j: usize,
    x: &FeatureMatrix,
    xt: &FeatureMatrix,
    pc: &dyn ConditionalLogDensity,
    qc: &dyn ConditionalLogDensity,
) -> Result<Vec<f64>> {
    let xj: Vec<f64> = x.column(j).iter().copied().collect();
    let xtj: Vec<f64> = xt.column(j).iter().copied().collect();
    let p_x = pc.log_densities(j, &xj, x);
    let p_xt = pc.log_densities(j, &xtj, x);
    let q_x = qc.log_densities(j, &xj, x);
    let q_xt = qc.log_densities(j, &xtj, x);
    (0..x.nrows())
        .map(|i| {
            let t = (p_x[i] - q_x[i]) - (p_xt[i] - q_xt[i]);
            if t.is_finite() {
                Ok(t)
            } else {
                Err(KnockoffError::NonFiniteLogDensity { row: i, feature: j })
            }
        })
        .collect()
}

/// Observed KL for every feature.
pub fn observed_kl(
    x: &FeatureMatrix,
    xt: &FeatureMatrix,
    p_conds: &dyn ConditionalLogDensity,
    q_conds: &dyn ConditionalLogDensity,
) -> Result<KlDiagnostics> {
    check_shapes(x, xt, p_conds, q_conds)?;
    let (n, p) = x.shape();
    let mut terms = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = column_terms(j, x, xt, p_conds, q_conds)?;
        terms.set_column(j, &DVector::from_vec(col));
    }
    let kl_hat: Vec<f64> = (0..p).map(|j| terms.column(j).sum()).collect();
    let max_kl = kl_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(KlDiagnostics { kl_hat, max_kl, per_observation_terms: terms })
}

/// Observed KL for a single feature.
pub fn observed_kl_feature(
    j: usize,
    x: &FeatureMatrix,
    xt: &FeatureMatrix,
    p_conds: &dyn ConditionalLogDensity,
    q_conds: &dyn ConditionalLogDensity,
) -> Result<f64> {
    check_shapes(x, xt, p_conds, q_conds)?;
    if j >= x.ncols() {
        return Err(KnockoffError::Shape(format!("feature {j} out of range")));
    }
    Ok(column_terms(j, x, xt, p_conds, q_conds)?.iter().sum())
}

/// Worst columnwise precision error:
/// `max_j theta_jj^{-1/2} || theta^{-1/2} (theta_tilde_j - theta_j) ||_2`.
pub fn delta_theta(theta: &GaussianModel, theta_tilde: &PrecisionEstimate) -> Result<f64> {
    let t = theta.precision();
    let tt = theta_tilde.matrix();
    if t.shape() != tt.shape() {
        return Err(KnockoffError::Shape("precision and estimate differ in shape".into()));
    }
    let inv_sqrt = linalg::pd_inv_sqrt(t)?;
    let diff = tt - t;
    let scaled = inv_sqrt * diff;
    Ok((0..t.ncols())
        .map(|j| scaled.column(j).norm() / t[(j, j)].sqrt())
        .fold(0.0, f64::max))
}

/// High-probability bound on `max_j KL_j` when every log-ratio is at most
/// `delta` in magnitude: `n delta^2 / 2 + 2 delta sqrt(n log p)`.
pub fn lemma2_bound(n: usize, p: usize, delta: f64) -> f64 {
    let n = n as f64;
    n * delta * delta / 2.0 + 2.0 * delta * (n * (p as f64).ln()).sqrt()
}

/// Effective per-term bound for Gaussian knockoffs with columnwise error
/// `delta_theta`: `2 sqrt(r^2 + r^4) (1 + 2 sqrt(log(np)/n))`, `r = dt/(1-dt)`.
/// Infinite once `delta_theta >= 1`.
pub fn lemma4_delta(delta_theta: f64, n: usize, p: usize) -> f64 {
    if delta_theta >= 1.0 || n == 0 {
        return f64::INFINITY;
    }
    let r = delta_theta / (1.0 - delta_theta);
    let nf = n as f64;
    2.0 * (r * r + r.powi(4)).sqrt() * (1.0 + 2.0 * ((nf * p as f64).ln() / nf).sqrt())
}

/// Explicit Gaussian bound on `max_j KL_j`, holding with probability `>= 1 - 2/p`.
pub fn lemma4_bound(delta_theta: f64, n: usize, p: usize) -> f64 {
    lemma2_bound(n, p, lemma4_delta(delta_theta, n, p))
}

/// Leading-order form `4 delta_theta sqrt(n log p)`.
pub fn lemma4_leading_term(delta_theta: f64, n: usize, p: usize) -> f64 {
    4.0 * delta_theta * (n as f64 * (p as f64).ln()).sqrt()
}

/// True iff `sum_i term_ij^2 <= n delta^2` for every feature.
pub fn event_e_delta_check(per_observation_terms: &DMatrix<f64>, delta: f64) -> bool {
    let limit = per_observation_terms.nrows() as f64 * delta * delta;
    per_observation_terms.column_iter().all(|c| c.norm_squared() <= limit)
}

/// `[0]` followed by 50 geometrically spaced points from `1e-3` to `5`.
pub fn default_epsilon_grid() -> Vec<f64> {
    let (lo, hi, k) = (1e-3f64, 5.0f64, 50);
    let step = (hi / lo).ln() / (k - 1) as f64;
    std::iter::once(0.0).chain((0..k).map(|i| lo * (step * i as f64).exp())).collect()
}

/// FDR bound `q e^eps + P(max_null KL > eps)` over an epsilon grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub q: f64,
    pub epsilon_grid: Vec<f64>,
    pub exceedance: Vec<f64>,
    pub inflation_bound: Vec<f64>,
    /// Bound using Wilson limits on the exceedance, when a replicate count is known.
    pub inflation_bound_lower: Option<Vec<f64>>,
    pub inflation_bound_upper: Option<Vec<f64>>,
    pub best_bound: f64,
    pub best_epsilon: f64,
    /// The same bound applied to `E[|S & H0| / (|S| + 1/q)]` for the plain knockoff filter.
    pub modified_fdr_bound: f64,
    /// True when even the best bound exceeds 1.
    pub vacuous: bool,
    pub delta_theta: Option<f64>,
    pub lemma2_bound: Option<f64>,
    pub lemma4_bound: Option<f64>,
}

/// Builds the bound report. `replicates`, when given, is the number of Monte
/// Carlo draws behind `exceedance` and turns on the interval columns.
pub fn inflation_bound(q: f64, epsilon_grid: &[f64], exceedance: &[f64], replicates: Option<usize>) -> Result<BoundReport> {
    if epsilon_grid.len() != exceedance.len() || epsilon_grid.is_empty() {
        return Err(KnockoffError::Shape("epsilon grid and exceedance must have equal nonzero length".into()));
    }
    if let Some(e) = exceedance.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(KnockoffError::Invalid(format!("exceedance {e} outside [0,1]")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(KnockoffError::Invalid(format!("q = {q} outside (0,1)")));
    }
    let bound: Vec<f64> = epsilon_grid.iter().zip(exceedance).map(|(&e, &x)| q * e.exp() + x).collect();
    let (best_idx, &best_bound) = bound
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let (lower, upper) = match replicates {
        Some(n) if n > 0 => {
            let limits: Vec<(f64, f64)> = exceedance
                .iter()
                .map(|&x| wilson_interval((x * n as f64).round() as usize, n, Z95))
                .collect();
            let lo = epsilon_grid.iter().zip(&limits).map(|(&e, l)| q * e.exp() + l.0).collect();
            let hi = epsilon_grid.iter().zip(&limits).map(|(&e, l)| q * e.exp() + l.1).collect();
            (Some(lo), Some(hi))
        }
        _ => (None, None),
    };
    Ok(BoundReport {
        q,
        epsilon_grid: epsilon_grid.to_vec(),
        exceedance: exceedance.to_vec(),
        inflation_bound: bound,
        inflation_bound_lower: lower,
        inflation_bound_upper: upper,
        best_bound,
        best_epsilon: epsilon_grid[best_idx],
        modified_fdr_bound: best_bound,
        vacuous: best_bound > 1.0,
        delta_theta: None,
        lemma2_bound: None,
        lemma4_bound: None,
    })
}
