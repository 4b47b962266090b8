//! Flip-sign importance statistics on the augmented design `[X, X_tilde]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::lasso::{self, LassoOptions};
use crate::{FeatureMatrix, ResponseVector};

pub const DEFAULT_LAMBDA_FRACTION: f64 = 0.1;

/// `[X, X_tilde]`, column-concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    columns: DMatrix<f64>,
    p: usize,
}

impl AugmentedDesign {
    pub fn new(x: &FeatureMatrix, xt: &FeatureMatrix) -> Result<Self> {
        if x.shape() != xt.shape() {
            return Err(KnockoffError::Shape(format!(
                "features {:?} and knockoffs {:?} differ in shape",
                x.shape(),
                xt.shape()
            )));
        }
        let (n, p) = x.shape();
        let mut columns = DMatrix::zeros(n, 2 * p);
        columns.columns_mut(0, p).copy_from(x);
        columns.columns_mut(p, p).copy_from(xt);
        Self::from_columns(columns)
    }

    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        if !columns.ncols().is_multiple_of(2) {
            return Err(KnockoffError::Shape(format!("augmented design has odd column count {}", columns.ncols())));
        }
        if let Some(k) = columns.iter().position(|v| !v.is_finite()) {
            let n = columns.nrows().max(1);
            return Err(KnockoffError::Invalid(format!(
                "non-finite design entry at row {}, column {}",
                k % n,
                k / n
            )));
        }
        let p = columns.ncols() / 2;
        Ok(Self { columns, p })
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Swaps `X_j` with `X_tilde_j` for every `j` in `subset`.
    pub fn swapped(&self, subset: &[usize]) -> Result<Self> {
        let mut columns = self.columns.clone();
        for &j in subset {
            if j >= self.p {
                return Err(KnockoffError::Shape(format!("swap index {j} out of range for p = {}", self.p)));
            }
            columns.swap_columns(j, j + self.p);
        }
        Ok(Self { columns, p: self.p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatisticKind {
    /// `|X_j^T Y| - |X_tilde_j^T Y|`
    #[serde(rename = "marginal")]
    MarginalCorrelationDifference,
    /// `|b_j| - |b_{j+p}|` from a lasso fit on the augmented design
    #[serde(rename = "lcd")]
    LassoCoefficientDifference,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::MarginalCorrelationDifference => "marginal",
            StatisticKind::LassoCoefficientDifference => "lcd",
        }
    }
}

/// Which statistic to compute, with its tuning. `seed` fixes the lasso's
/// coordinate order and is ignored by the marginal statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    pub lambda_fraction: f64,
    pub seed: u64,
}

impl StatisticSpec {
    pub fn marginal() -> Self {
        Self { kind: StatisticKind::MarginalCorrelationDifference, lambda_fraction: DEFAULT_LAMBDA_FRACTION, seed: 0 }
    }

    pub fn lcd(lambda_fraction: f64, seed: u64) -> Self {
        Self { kind: StatisticKind::LassoCoefficientDifference, lambda_fraction, seed }
    }

    pub fn compute(&self, design: &AugmentedDesign, y: &ResponseVector) -> Result<WStatistics> {
        match self.kind {
            StatisticKind::MarginalCorrelationDifference => marginal_stats(design, y),
            StatisticKind::LassoCoefficientDifference => lcd_stats(design, y, self.lambda_fraction, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WStatistics {
    pub w: Vec<f64>,
    pub statistic_kind: StatisticKind,
    /// Penalty actually used (lasso only).
    pub lambda_used: Option<f64>,
    /// False when the lasso hit its pass cap; `w` then comes from the last iterate.
    pub converged: bool,
    /// Set once `check_flip_sign` has passed on these inputs.
    pub flip_sign_verified: bool,
}

fn check_response(design: &AugmentedDesign, y: &ResponseVector) -> Result<()> {
    if y.len() != design.n() {
        return Err(KnockoffError::Shape(format!("response has length {}, design has {} rows", y.len(), design.n())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(KnockoffError::Invalid(format!("non-finite response at row {i}")));
    }
    Ok(())
}

pub fn marginal_stats(design: &AugmentedDesign, y: &ResponseVector) -> Result<WStatistics> {
    check_response(design, y)?;
    let p = design.p();
    let z = design.columns().tr_mul(y);
    let w = (0..p).map(|j| z[j].abs() - z[j + p].abs()).collect();
    Ok(WStatistics {
        w,
        statistic_kind: StatisticKind::MarginalCorrelationDifference,
        lambda_used: None,
        converged: true,
        flip_sign_verified: false,
    })
}

/// Lasso coefficient difference at `lambda = lambda_fraction * lambda_max`.
pub fn lcd_stats(design: &AugmentedDesign, y: &ResponseVector, lambda_fraction: f64, seed: u64) -> Result<WStatistics> {
    check_response(design, y)?;
    if !(lambda_fraction > 0.0 && lambda_fraction <= 1.0) {
        return Err(KnockoffError::Invalid(format!("lambda fraction {lambda_fraction} not in (0, 1]")));
    }
    let p = design.p();
    let lmax = lasso::lambda_max(design.columns(), y);
    if lmax == 0.0 {
        // zero response or zero design: every coefficient is zero
        return Ok(WStatistics {
            w: vec![0.0; p],
            statistic_kind: StatisticKind::LassoCoefficientDifference,
            lambda_used: Some(0.0),
            converged: true,
            flip_sign_verified: false,
        });
    }
    let lambda = lambda_fraction * lmax;
    let opts = LassoOptions { permutation_seed: Some(seed), ..Default::default() };
    let fit = lasso::lasso_coordinate_descent(design.columns(), y, lambda, &opts)?;
    let w = (0..p).map(|j| fit.beta[j].abs() - fit.beta[j + p].abs()).collect();
    Ok(WStatistics {
        w,
        statistic_kind: StatisticKind::LassoCoefficientDifference,
        lambda_used: Some(lambda),
        converged: fit.converged,
        flip_sign_verified: false,
    })
}

/// Result of a flip-sign audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipSignCheck {
    pub passed: bool,
    /// First index violating the property, if any.
    pub offending: Option<usize>,
    pub max_deviation: f64,
    pub tolerance: f64,
}

/// Tolerance used for the lasso statistic; the marginal one must match exactly.
pub const LASSO_FLIP_TOL: f64 = 1e-6;

/// Recomputes `W` after swapping the pairs in `subset` and checks that exactly
/// those entries change sign.
pub fn check_flip_sign(
    spec: &StatisticSpec,
    design: &AugmentedDesign,
    y: &ResponseVector,
    subset: &[usize],
) -> Result<FlipSignCheck> {
    let w = spec.compute(design, y)?;
    let ws = spec.compute(&design.swapped(subset)?, y)?;
    let tolerance = match spec.kind {
        StatisticKind::MarginalCorrelationDifference => 0.0,
        StatisticKind::LassoCoefficientDifference => LASSO_FLIP_TOL,
    };
    let mut in_subset = vec![false; design.p()];
    for &j in subset {
        in_subset[j] = true;
    }
    let mut max_deviation: f64 = 0.0;
    let mut offending = None;
    for j in 0..design.p() {
        let want = if in_subset[j] { -w.w[j] } else { w.w[j] };
        let dev = (ws.w[j] - want).abs();
        if dev > tolerance && offending.is_none() {
            offending = Some(j);
        }
        max_deviation = max_deviation.max(dev);
    }
    Ok(FlipSignCheck { passed: offending.is_none(), offending, max_deviation, tolerance })
}

/// Computes `W` and audits the flip-sign property on `subset` in one go.
pub fn audited_statistics(
    spec: &StatisticSpec,
    design: &AugmentedDesign,
    y: &ResponseVector,
    subset: &[usize],
) -> Result<WStatistics> {
    let mut w = spec.compute(design, y)?;
    w.flip_sign_verified = check_flip_sign(spec, design, y, subset)?.passed;
    Ok(w)
}

/// Convenience for callers holding plain vectors.
pub fn response(values: &[f64]) -> ResponseVector {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_design(n: usize, p: usize, seed: u64) -> (AugmentedDesign, ResponseVector) {
        let mut r = rng::seeded(seed);
        let x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
        let xt = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] + r.sample::<f64, _>(StandardNormal));
        (AugmentedDesign::new(&x, &xt).unwrap(), y)
    }

    #[test]
    fn marginal_hand_value() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let xt = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let d = AugmentedDesign::new(&x, &xt).unwrap();
        let w = marginal_stats(&d, &response(&[2.0, 1.0])).unwrap();
        assert_eq!(w.w, vec![1.0]);
    }

    #[test]
    fn identical_knockoffs_give_zero() {
        let (d, y) = random_design(30, 4, 3);
        let x = d.columns().columns(0, 4).clone_owned();
        let same = AugmentedDesign::new(&x, &x).unwrap();
        for spec in [StatisticSpec::marginal(), StatisticSpec::lcd(0.1, 7)] {
            let w = spec.compute(&same, &y).unwrap();
            assert!(w.w.iter().all(|&v| v == 0.0), "{:?}", w.w);
        }
    }

    #[test]
    fn zero_response_gives_zero() {
        let (d, _) = random_design(10, 3, 1);
        let y = DVector::zeros(10);
        assert!(marginal_stats(&d, &y).unwrap().w.iter().all(|&v| v == 0.0));
        assert!(lcd_stats(&d, &y, 0.1, 0).unwrap().w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_swap_negates_marginal_exactly() {
        let (d, y) = random_design(20, 5, 2);
        let all: Vec<usize> = (0..5).collect();
        let c = check_flip_sign(&StatisticSpec::marginal(), &d, &y, &all).unwrap();
        assert!(c.passed && c.max_deviation == 0.0);
        let c = check_flip_sign(&StatisticSpec::marginal(), &d, &y, &[]).unwrap();
        assert!(c.passed && c.max_deviation == 0.0);
    }

    #[test]
    fn lasso_flip_sign_on_random_subset() {
        let (d, y) = random_design(50, 6, 8);
        let spec = StatisticSpec::lcd(0.1, 4);
        let c = check_flip_sign(&spec, &d, &y, &[0, 3, 4]).unwrap();
        assert!(c.passed, "{c:?}");
        let w = audited_statistics(&spec, &d, &y, &[1]).unwrap();
        assert!(w.flip_sign_verified && w.lambda_used.unwrap() > 0.0);
    }

    #[test]
    fn strong_signal_is_positive() {
        let (d, y) = random_design(100, 5, 12);
        let w = lcd_stats(&d, &y, 0.1, 0).unwrap();
        assert!(w.w[0] > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (d, y) = random_design(10, 2, 0);
        assert!(lcd_stats(&d, &y, 0.0, 0).is_err());
        assert!(marginal_stats(&d, &response(&[1.0])).is_err());
        assert!(d.swapped(&[2]).is_err());
        let mut cols = d.columns().clone();
        cols[(0, 0)] = f64::NAN;
        assert!(AugmentedDesign::from_columns(cols).is_err());
    }
}
