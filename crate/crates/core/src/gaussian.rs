//! Gaussian knockoffs built from an estimated precision matrix.
//!
//! Given a symmetric estimate `theta_tilde` with positive diagonal and a
//! nonnegative diagonal `D`, knockoffs are drawn row by row as
//!
//! ```text
//! x_tilde | x  ~  N((I - D theta_tilde) x,  2D - D theta_tilde D)
//! ```
//!
//! The estimate need not be positive semidefinite; only `2D - D theta_tilde D`
//! has to be. The model mean is fixed at zero, so callers center their data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{KnockoffError, Result};
use crate::linalg::{self, EIG_CLIP};
use crate::rng;
use crate::FeatureMatrix;

/// Largest number of halvings tried when searching for a feasible `D`.
pub const MAX_HALVINGS: usize = 60;

/// Symmetric precision estimate with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    theta_tilde: DMatrix<f64>,
    is_psd: bool,
}

impl PrecisionEstimate {
    /// Symmetrizes the input as `(M + M^T) / 2` and checks the diagonal.
    pub fn new(theta_tilde: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_square(&theta_tilde) || theta_tilde.nrows() == 0 {
            return Err(KnockoffError::Shape(format!(
                "precision estimate must be square and non-empty, got {}x{}",
                theta_tilde.nrows(),
                theta_tilde.ncols()
            )));
        }
        if theta_tilde.iter().any(|v| !v.is_finite()) {
            return Err(KnockoffError::Invalid("precision estimate has non-finite entries".into()));
        }
        let theta_tilde = linalg::symmetrize(&theta_tilde);
        if let Some(j) = (0..theta_tilde.nrows()).find(|&j| theta_tilde[(j, j)] <= 0.0) {
            return Err(KnockoffError::Invalid(format!(
                "precision estimate diagonal entry {j} is {} (must be > 0)",
                theta_tilde[(j, j)]
            )));
        }
        let is_psd = linalg::min_eigenvalue(&theta_tilde) >= -EIG_CLIP;
        Ok(Self { theta_tilde, is_psd })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta_tilde
    }

    pub fn is_psd(&self) -> bool {
        self.is_psd
    }

    pub fn dim(&self) -> usize {
        self.theta_tilde.nrows()
    }
}

/// True feature law `N(0, theta^{-1})` with positive-definite precision.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    theta: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_square(&theta) || theta.nrows() == 0 {
            return Err(KnockoffError::Shape("precision matrix must be square and non-empty".into()));
        }
        let theta = linalg::symmetrize(&theta);
        let min = linalg::min_eigenvalue(&theta);
        if !(min > EIG_CLIP) {
            return Err(KnockoffError::NotPositiveDefinite(format!(
                "precision minimum eigenvalue {min:e}"
            )));
        }
        Ok(Self { theta })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        linalg::pd_inverse(&self.theta)
    }

    /// As an estimate, e.g. for exact knockoffs.
    pub fn as_estimate(&self) -> PrecisionEstimate {
        PrecisionEstimate { theta_tilde: self.theta.clone(), is_psd: true }
    }

    /// Draws `n` iid rows from `N(0, theta^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FeatureMatrix> {
        let sampler = GaussianRowSampler::new(self)?;
        Ok(sampler.sample(n, rng))
    }
}

/// Cached Cholesky factor for repeated draws from one model.
#[derive(Debug, Clone)]
pub struct GaussianRowSampler {
    chol_t: DMatrix<f64>,
}

impl GaussianRowSampler {
    pub fn new(model: &GaussianModel) -> Result<Self> {
        let cov = model.covariance()?;
        let l = cov
            .cholesky()
            .ok_or_else(|| KnockoffError::NotPositiveDefinite("covariance cholesky failed".into()))?
            .l();
        Ok(Self { chol_t: l.transpose() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> FeatureMatrix {
        let p = self.chol_t.nrows();
        rng::standard_normal_matrix(rng, n, p) * &self.chol_t
    }
}

/// Conditional law of one coordinate given the others:
/// `x_j | x_{-j} ~ N(x_{-j}^T coeffs, variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub feature: usize,
    pub coeffs: DVector<f64>,
    pub variance: f64,
}

impl ConditionalGaussian {
    /// Regression coefficients `-theta_{-j,j} / theta_jj` and variance `1 / theta_jj`.
    pub fn of(theta: &DMatrix<f64>, j: usize) -> Result<Self> {
        let p = theta.nrows();
        if j >= p {
            return Err(KnockoffError::Shape(format!("feature {j} out of range for p = {p}")));
        }
        let tjj = theta[(j, j)];
        if !(tjj > 0.0) {
            return Err(KnockoffError::Invalid(format!(
                "diagonal entry {j} is {tjj} (must be > 0)"
            )));
        }
        let coeffs = DVector::from_iterator(
            p - 1,
            (0..p).filter(|&k| k != j).map(|k| -theta[(k, j)] / tjj),
        );
        Ok(Self { feature: j, coeffs, variance: 1.0 / tjj })
    }

    /// Conditional mean given a full row (entry `j` of the row is ignored).
    pub fn mean(&self, row: &[f64]) -> f64 {
        let j = self.feature;
        row.iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .zip(self.coeffs.iter())
            .map(|((_, x), c)| x * c)
            .sum()
    }

    pub fn log_density(&self, value: f64, mean: f64) -> f64 {
        let r = value - mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - r * r / (2.0 * self.variance)
    }
}

/// Equicorrelated choice of `D`.
///
/// For a positive-definite estimate, `d = min(1, 2 lambda_min(corr(Sigma)))`
/// on the correlation scale of `Sigma = theta_tilde^{-1}`, mapped back by
/// `Sigma_jj`. Otherwise start from `d_j = 1 / theta_tilde_jj`. Either way the
/// whole vector is halved until `2D - D theta_tilde D` is PSD up to `EIG_CLIP`.
pub fn select_equicorrelated_d(theta_tilde: &PrecisionEstimate) -> Result<DVector<f64>> {
    let t = theta_tilde.matrix();
    let p = t.nrows();
    let start = match linalg::pd_inverse(t) {
        Ok(sigma) if theta_tilde.is_psd() => {
            let scale = DVector::from_iterator(p, (0..p).map(|j| sigma[(j, j)].sqrt()));
            let corr = DMatrix::from_fn(p, p, |a, b| sigma[(a, b)] / (scale[a] * scale[b]));
            let s = (2.0 * linalg::min_eigenvalue(&corr)).clamp(0.0, 1.0);
            DVector::from_iterator(p, (0..p).map(|j| s * sigma[(j, j)]))
        }
        _ => DVector::from_iterator(p, (0..p).map(|j| 1.0 / t[(j, j)])),
    };
    let mut d = start;
    for _ in 0..=MAX_HALVINGS {
        if linalg::min_eigenvalue(&knockoff_covariance(t, &d)) >= -EIG_CLIP {
            return Ok(d);
        }
        d *= 0.5;
    }
    Err(KnockoffError::BacktrackingExhausted { halvings: MAX_HALVINGS })
}

/// `2D - D theta_tilde D`.
pub fn knockoff_covariance(theta_tilde: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let p = d.len();
    DMatrix::from_fn(p, p, |a, b| {
        let two_d = if a == b { 2.0 * d[a] } else { 0.0 };
        two_d - d[a] * theta_tilde[(a, b)] * d[b]
    })
}

/// The sampling law `P(x_tilde | x)`; immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffMechanism {
    theta_tilde: PrecisionEstimate,
    diag_d: DVector<f64>,
    cond_mean_map: DMatrix<f64>,
    cond_cov_root: DMatrix<f64>,
}

impl KnockoffMechanism {
    pub fn build(theta_tilde: PrecisionEstimate, diag_d: DVector<f64>) -> Result<Self> {
        let p = theta_tilde.dim();
        if diag_d.len() != p {
            return Err(KnockoffError::Shape(format!(
                "diagonal has length {}, expected {p}",
                diag_d.len()
            )));
        }
        if let Some(j) = diag_d.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(KnockoffError::Invalid(format!("d[{j}] = {} is not >= 0", diag_d[j])));
        }
        let t = theta_tilde.matrix();
        let cond_mean_map =
            DMatrix::identity(p, p) - DMatrix::from_diagonal(&diag_d) * t;
        let cond_cov_root = linalg::psd_sqrt(&knockoff_covariance(t, &diag_d))?;
        Ok(Self { theta_tilde, diag_d, cond_mean_map, cond_cov_root })
    }

    /// Mechanism with the default equicorrelated `D`.
    pub fn equicorrelated(theta_tilde: PrecisionEstimate) -> Result<Self> {
        let d = select_equicorrelated_d(&theta_tilde)?;
        Self::build(theta_tilde, d)
    }

    pub fn theta_tilde(&self) -> &PrecisionEstimate {
        &self.theta_tilde
    }

    pub fn diag_d(&self) -> &DVector<f64> {
        &self.diag_d
    }

    pub fn cond_mean_map(&self) -> &DMatrix<f64> {
        &self.cond_mean_map
    }

    pub fn cond_cov_root(&self) -> &DMatrix<f64> {
        &self.cond_cov_root
    }

    pub fn dim(&self) -> usize {
        self.diag_d.len()
    }

    /// Samples one knockoff row per row of `x`, deterministically from `seed`.
    pub fn sample(&self, x: &FeatureMatrix, seed: u64) -> Result<FeatureMatrix> {
        self.sample_with(x, &mut rng::seeded(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, x: &FeatureMatrix, rng: &mut R) -> Result<FeatureMatrix> {
        if x.ncols() != self.dim() {
            return Err(KnockoffError::Shape(format!(
                "feature matrix has {} columns, mechanism expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        let z = rng::standard_normal_matrix(rng, x.nrows(), self.dim());
        // rows: (I - D T) x_i + R z_i, with R symmetric
        Ok(x * self.cond_mean_map.transpose() + z * &self.cond_cov_root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn est(rows: usize, data: &[f64]) -> PrecisionEstimate {
        PrecisionEstimate::new(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    #[test]
    fn equicorrelated_identity() {
        let d = select_equicorrelated_d(&est(2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equicorrelated_scaled_identity() {
        let d = select_equicorrelated_d(&est(2, &[4.0, 0.0, 0.0, 4.0])).unwrap();
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equicorrelated_scalar() {
        let d = select_equicorrelated_d(&est(1, &[2.0])).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_psd_estimate_backtracks_to_feasible_d() {
        // eigenvalues 2.2, 2.2, -1.4: d = 1 is infeasible, d = 1/2 is not
        let t = est(3, &[1.0, 1.2, 1.2, 1.2, 1.0, -1.2, 1.2, -1.2, 1.0]);
        assert!(!t.is_psd());
        let d = select_equicorrelated_d(&t).unwrap();
        assert!(d.iter().all(|&v| v == 0.5));
        assert!(linalg::min_eigenvalue(&knockoff_covariance(t.matrix(), &d)) >= -EIG_CLIP);
        KnockoffMechanism::build(t, d).unwrap();
    }

    #[test]
    fn estimate_symmetrizes_and_checks_diagonal() {
        let t = est(2, &[1.0, 0.25, 0.75, 1.0]);
        assert_eq!(t.matrix()[(0, 1)], 0.5);
        assert_eq!(t.matrix()[(1, 0)], 0.5);
        assert!(PrecisionEstimate::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).is_err());
        assert!(PrecisionEstimate::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_err());
    }

    #[test]
    fn model_rejects_indefinite_precision() {
        assert!(GaussianModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn zero_d_copies_features() {
        let t = est(2, &[2.0, -0.5, -0.5, 1.0]);
        let mech = KnockoffMechanism::build(t, DVector::zeros(2)).unwrap();
        assert_eq!(mech.cond_mean_map(), &DMatrix::identity(2, 2));
        assert!(mech.cond_cov_root().iter().all(|&v| v == 0.0));
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.25, 3.0, 1e-3]);
        assert_eq!(mech.sample(&x, 11).unwrap(), x);
    }

    #[test]
    fn identity_precision_with_unit_d_gives_independent_noise() {
        let mech = KnockoffMechanism::build(est(2, &[1.0, 0.0, 0.0, 1.0]), DVector::from_element(2, 1.0)).unwrap();
        assert!(mech.cond_mean_map().iter().all(|&v| v == 0.0));
        assert!(max_abs_diff(&(mech.cond_cov_root() * mech.cond_cov_root()), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn root_reproduces_covariance_for_correlated_pair() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let theta = linalg::pd_inverse(&sigma).unwrap();
        let t = PrecisionEstimate::new(theta).unwrap();
        let d = select_equicorrelated_d(&t).unwrap();
        // corr = sigma, lambda_min = 0.5, so s = min(1, 1) = 1
        assert!((d[0] - 1.0).abs() < 1e-12);
        let cov = knockoff_covariance(t.matrix(), &d);
        let mech = KnockoffMechanism::build(t, d).unwrap();
        let r = mech.cond_cov_root();
        assert!(max_abs_diff(&(r * r), &cov) < 1e-8);
        // independent check of PSD-ness from the eigenvalues of the 2x2
        let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let disc = ((a - c) * (a - c) / 4.0 + b * b).sqrt();
        assert!((a + c) / 2.0 - disc >= -1e-10);
    }

    #[test]
    fn build_rejects_infeasible_d() {
        let t = est(2, &[1.0, 0.0, 0.0, 1.0]);
        // 2d - d^2 < 0 for d = 3
        assert!(matches!(
            KnockoffMechanism::build(t.clone(), DVector::from_element(2, 3.0)),
            Err(KnockoffError::InfeasibleCovariance { .. })
        ));
        assert!(KnockoffMechanism::build(t, DVector::from_vec(vec![-0.1, 0.0])).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_checks_shape() {
        let mech = KnockoffMechanism::equicorrelated(est(2, &[1.0, 0.3, 0.3, 1.0])).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mech.sample(&x, 5).unwrap(), mech.sample(&x, 5).unwrap());
        assert_ne!(mech.sample(&x, 5).unwrap(), mech.sample(&x, 6).unwrap());
        assert!(mech.sample(&DMatrix::zeros(2, 3), 5).is_err());
    }

    #[test]
    fn conditional_examples() {
        let c = ConditionalGaussian::of(&DMatrix::identity(3, 3), 1).unwrap();
        assert!(c.coeffs.iter().all(|&v| v == 0.0));
        assert_eq!(c.variance, 1.0);

        let c = ConditionalGaussian::of(&DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]), 0).unwrap();
        assert_eq!(c.coeffs.as_slice(), &[0.5]);
        assert_eq!(c.variance, 0.5);

        let c = ConditionalGaussian::of(&DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]), 1).unwrap();
        assert_eq!(c.coeffs.as_slice(), &[0.0]);
        assert!((c.variance - 1.0 / 9.0).abs() < 1e-16);

        assert!(ConditionalGaussian::of(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), 0).is_err());
    }
}
