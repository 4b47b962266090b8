//! Scenario generation and the Monte Carlo harness.
//!
//! A scenario fixes the true precision `theta`, the estimate `theta_tilde`, the
//! knockoff mechanism and the signal placement once; replicate `i` then draws
//! `(X, Y, X_tilde)` from its own stream `(seed, i)`, so a report depends only on
//! the configuration and the seed, never on thread count or scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, BoundReport, GaussianConditionals};
use crate::error::{KnockoffError, Result};
use crate::filter::{self, FilterVariant};
use crate::gaussian::{GaussianModel, GaussianRowSampler, KnockoffMechanism, PrecisionEstimate};
use crate::lasso::{self, LassoOptions};
use crate::linalg;
use crate::mc::Estimate;
use crate::rng;
use crate::stats::{AugmentedDesign, StatisticKind, StatisticSpec, DEFAULT_LAMBDA_FRACTION};
use crate::{FeatureMatrix, ResponseVector};

// stream indices reserved for scenario-level draws, far from replicate indices
const PERTURB_STREAM: u64 = u64::MAX;
const UNLABELED_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    /// `Y = X beta + N(0, 1)`
    #[default]
    LinearGaussian,
    /// `Y ~ Bernoulli(1 / (1 + exp(-X beta)))`, coded 0/1
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrecisionMode {
    /// Knockoffs built from the true precision.
    Exact {},
    /// Random symmetric perturbation scaled to a given columnwise error.
    ColumnPerturb { delta_target: f64 },
    /// Nodewise lasso on an independent unlabeled sample.
    NodewiseLasso { unlabeled_n: usize, lambda_fraction: f64 },
}

impl Default for PrecisionMode {
    fn default() -> Self {
        PrecisionMode::Exact {}
    }
}

fn one() -> u32 {
    1
}
fn default_statistic() -> StatisticKind {
    StatisticKind::LassoCoefficientDifference
}
fn default_lambda_fraction() -> f64 {
    DEFAULT_LAMBDA_FRACTION
}
fn default_variant() -> FilterVariant {
    FilterVariant::KnockoffPlus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "one")]
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub ar1_rho: f64,
    pub signal_count: usize,
    pub signal_amplitude: f64,
    #[serde(default)]
    pub response_kind: ResponseKind,
    pub q: f64,
    #[serde(default = "default_statistic")]
    pub statistic: StatisticKind,
    #[serde(default = "default_lambda_fraction")]
    pub lambda_fraction: f64,
    #[serde(default = "default_variant")]
    pub variant: FilterVariant,
    #[serde(default)]
    pub precision_mode: PrecisionMode,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `diagnostics::default_epsilon_grid()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_grid: Option<Vec<f64>>,
}

impl ScenarioConfig {
    /// AR(1) `rho = 0.5`, `n = 300`, `p = 50`, ten signals of amplitude 3.5,
    /// lasso statistic, knockoff+, `q = 0.2`, exact knockoffs.
    pub fn reference() -> Self {
        Self {
            format_version: 1,
            n: 300,
            p: 50,
            ar1_rho: 0.5,
            signal_count: 10,
            signal_amplitude: 3.5,
            response_kind: ResponseKind::LinearGaussian,
            q: 0.2,
            statistic: StatisticKind::LassoCoefficientDifference,
            lambda_fraction: DEFAULT_LAMBDA_FRACTION,
            variant: FilterVariant::KnockoffPlus,
            precision_mode: PrecisionMode::Exact {},
            replicates: 500,
            seed: 0,
            epsilon_grid: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KnockoffError::Invalid(m));
        if self.format_version != 1 {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if self.p == 0 || self.n == 0 {
            return bad("n and p must be positive".into());
        }
        if self.signal_count > self.p {
            return bad(format!("signal_count {} exceeds p = {}", self.signal_count, self.p));
        }
        if !(self.ar1_rho.abs() < 1.0) {
            return bad(format!("ar1_rho = {} must satisfy |rho| < 1", self.ar1_rho));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} outside (0,1)", self.q));
        }
        if !(self.lambda_fraction > 0.0 && self.lambda_fraction <= 1.0) {
            return bad(format!("lambda_fraction = {} outside (0,1]", self.lambda_fraction));
        }
        if !self.signal_amplitude.is_finite() {
            return bad("signal_amplitude must be finite".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        match self.precision_mode {
            PrecisionMode::ColumnPerturb { delta_target } if !(delta_target >= 0.0) => {
                return bad(format!("delta_target = {delta_target} must be >= 0"));
            }
            PrecisionMode::NodewiseLasso { unlabeled_n, lambda_fraction } if unlabeled_n < 2 || !(lambda_fraction > 0.0) => {
                return bad("nodewise_lasso needs unlabeled_n >= 2 and lambda_fraction > 0".into());
            }
            _ => {}
        }
        if let Some(g) = &self.epsilon_grid {
            if g.is_empty() || g.iter().any(|e| !(*e >= 0.0)) {
                return bad("epsilon_grid must be non-empty and non-negative".into());
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.epsilon_grid.clone().unwrap_or_else(diagnostics::default_epsilon_grid)
    }
}

/// Signal placement: `k` evenly spaced indices with alternating signs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTruth {
    pub nonnull_set: Vec<usize>,
    pub beta: Vec<f64>,
}

impl SimulationTruth {
    pub fn new(p: usize, k: usize, amplitude: f64) -> Self {
        let mut beta = vec![0.0; p];
        for i in 0..k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            beta[i * p / k] = sign * amplitude;
        }
        let nonnull_set = (0..p).filter(|&j| beta[j] != 0.0).collect();
        Self { nonnull_set, beta }
    }

    pub fn is_null(&self, j: usize) -> bool {
        self.beta[j] == 0.0
    }

    pub fn nulls(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.is_null(j)).collect()
    }
}

/// Precision of the stationary AR(1) covariance `Sigma_ij = rho^|i-j|`.
pub fn gen_ar1_precision(p: usize, rho: f64) -> Result<GaussianModel> {
    if !(rho.abs() < 1.0) {
        return Err(KnockoffError::Invalid(format!("ar1 rho = {rho} must satisfy |rho| < 1")));
    }
    if p == 0 {
        return Err(KnockoffError::Invalid("p must be positive".into()));
    }
    let c = 1.0 / (1.0 - rho * rho);
    let theta = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            if p == 1 {
                1.0
            } else if i == 0 || i == p - 1 {
                c
            } else {
                (1.0 + rho * rho) * c
            }
        } else if i.abs_diff(j) == 1 {
            -rho * c
        } else {
            0.0
        }
    });
    GaussianModel::new(theta)
}

fn columnwise_error(theta: &DMatrix<f64>, diff: &DMatrix<f64>) -> Result<f64> {
    let scaled = linalg::pd_inv_sqrt(theta)? * diff;
    Ok((0..theta.ncols()).map(|j| scaled.column(j).norm() / theta[(j, j)].sqrt()).fold(0.0, f64::max))
}

/// `theta + s E` for a random symmetric Gaussian `E`, with `s` chosen so the
/// columnwise error equals `delta_target`.
pub fn perturb_precision(theta: &GaussianModel, delta_target: f64, seed: u64) -> Result<PrecisionEstimate> {
    if !(delta_target >= 0.0) || !delta_target.is_finite() {
        return Err(KnockoffError::Invalid(format!("delta_target = {delta_target} must be >= 0")));
    }
    if delta_target == 0.0 {
        return Ok(theta.as_estimate());
    }
    let t = theta.precision();
    let p = t.nrows();
    let mut r = rng::stream(seed, PERTURB_STREAM);
    let mut e = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v: f64 = r.sample(StandardNormal);
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    let base = columnwise_error(t, &e)?;
    let tt = t + e * (delta_target / base);
    if let Some(j) = (0..p).find(|&j| !(tt[(j, j)] > 0.0)) {
        return Err(KnockoffError::Invalid(format!(
            "perturbation at delta {delta_target} makes diagonal entry {j} non-positive"
        )));
    }
    PrecisionEstimate::new(tt)
}

/// Nodewise lasso: regress each column on the rest at
/// `lambda_fraction * lambda_max`, then `theta_jj = 1/tau_j^2` and
/// `theta_{-j,j} = -gamma_j / tau_j^2`, symmetrized. May be indefinite.
pub fn nodewise_estimate(unlabeled_x: &FeatureMatrix, lambda_fraction: f64) -> Result<PrecisionEstimate> {
    let (n, p) = unlabeled_x.shape();
    if n < 2 || p == 0 {
        return Err(KnockoffError::Invalid("nodewise estimate needs at least 2 rows and 1 column".into()));
    }
    if !(lambda_fraction > 0.0) {
        return Err(KnockoffError::Invalid(format!("lambda_fraction = {lambda_fraction} must be > 0")));
    }
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let y: DVector<f64> = unlabeled_x.column(j).clone_owned();
        let rest = unlabeled_x.clone().remove_column(j);
        let mut gamma = DVector::zeros(p - 1);
        if p > 1 {
            let lmax = lasso::lambda_max(&rest, &y);
            if lmax > 0.0 && lambda_fraction < 1.0 {
                let fit = lasso::lasso_coordinate_descent(&rest, &y, lambda_fraction * lmax, &LassoOptions::default())?;
                gamma = fit.beta;
            }
        }
        let resid = &y - &rest * &gamma;
        let tau2 = resid.norm_squared() / n as f64;
        if !(tau2 > 0.0) {
            return Err(KnockoffError::ZeroResidualVariance(j));
        }
        theta[(j, j)] = 1.0 / tau2;
        for (slot, k) in (0..p).filter(|&k| k != j).enumerate() {
            theta[(k, j)] = -gamma[slot] / tau2;
        }
    }
    PrecisionEstimate::new(theta)
}

/// Everything fixed across replicates.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: GaussianModel,
    pub estimate: PrecisionEstimate,
    pub mechanism: KnockoffMechanism,
    pub truth: SimulationTruth,
    pub delta_theta: f64,
    p_conds: GaussianConditionals,
    q_conds: GaussianConditionals,
    sampler: GaussianRowSampler,
}

impl Scenario {
    pub fn prepare(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let model = gen_ar1_precision(config.p, config.ar1_rho)?;
        let estimate = match config.precision_mode {
            PrecisionMode::Exact {} => model.as_estimate(),
            PrecisionMode::ColumnPerturb { delta_target } => perturb_precision(&model, delta_target, config.seed)?,
            PrecisionMode::NodewiseLasso { unlabeled_n, lambda_fraction } => {
                let xu = model.sample(unlabeled_n, &mut rng::stream(config.seed, UNLABELED_STREAM))?;
                nodewise_estimate(&xu, lambda_fraction)?
            }
        };
        let mechanism = KnockoffMechanism::equicorrelated(estimate.clone())?;
        let delta_theta = diagnostics::delta_theta(&model, &estimate)?;
        Ok(Self {
            truth: SimulationTruth::new(config.p, config.signal_count, config.signal_amplitude),
            p_conds: GaussianConditionals::from_model(&model)?,
            q_conds: GaussianConditionals::from_estimate(&estimate)?,
            sampler: GaussianRowSampler::new(&model)?,
            config: config.clone(),
            model,
            estimate,
            mechanism,
            delta_theta,
        })
    }

    fn response<R: Rng + ?Sized>(&self, x: &FeatureMatrix, rng: &mut R) -> ResponseVector {
        let beta = DVector::from_column_slice(&self.truth.beta);
        let eta = x * beta;
        match self.config.response_kind {
            ResponseKind::LinearGaussian => eta.map(|v| v + rng.sample::<f64, _>(StandardNormal)),
            ResponseKind::Logistic => eta.map(|v| {
                let prob = 1.0 / (1.0 + (-v).exp());
                if rng.random::<f64>() < prob { 1.0 } else { 0.0 }
            }),
        }
    }
}

/// Raw output of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub selected: Vec<usize>,
    pub w: Vec<f64>,
    pub kl_hat: Vec<f64>,
    pub lambda_used: Option<f64>,
    pub converged: bool,
}

pub fn run_replicate(scenario: &Scenario, index: usize) -> Result<ReplicateRecord> {
    let inner = || -> Result<ReplicateRecord> {
        let cfg = &scenario.config;
        let mut r = rng::stream(cfg.seed, index as u64);
        let x = scenario.sampler.sample(cfg.n, &mut r);
        let y = scenario.response(&x, &mut r);
        // knockoffs never look at y
        let xt = scenario.mechanism.sample_with(&x, &mut r)?;
        let spec = StatisticSpec { kind: cfg.statistic, lambda_fraction: cfg.lambda_fraction, seed: r.random() };
        let w = spec.compute(&AugmentedDesign::new(&x, &xt)?, &y)?;
        let sel = filter::threshold(&w.w, cfg.q, cfg.variant)?;
        let kl = diagnostics::observed_kl(&x, &xt, &scenario.p_conds, &scenario.q_conds)?;
        Ok(ReplicateRecord {
            index,
            selected: sel.selected,
            w: w.w,
            kl_hat: kl.kl_hat,
            lambda_used: w.lambda_used,
            converged: w.converged,
        })
    };
    inner().map_err(|e| e.in_replicate(index))
}

/// All replicates, in index order regardless of completion order.
pub fn run_replicates(scenario: &Scenario) -> Result<Vec<ReplicateRecord>> {
    (0..scenario.config.replicates).into_par_iter().map(|i| run_replicate(scenario, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub estimate: Estimate,
    /// `q e^epsilon`
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullSignSummary {
    pub feature: usize,
    pub positive: usize,
    pub nonzero: usize,
    pub frequency: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub selected_count: usize,
    pub false_count: usize,
    /// Largest `KL_j` over nulls; `null` in JSON when there are no nulls.
    pub max_kl_null: f64,
}

/// Pass/fail of the bounds at 3 standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundChecks {
    pub restricted_fdr_within_bound: bool,
    pub restricted_modified_fdr_within_bound: bool,
    pub fdr_within_best_bound: bool,
    pub modified_fdr_within_best_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub replicates: usize,
    pub q: f64,
    pub empirical_fdr: Estimate,
    pub empirical_power: Estimate,
    /// `E[ |{j in S & H0 : KL_j <= eps}| / max(|S|, 1) ]`
    pub restricted_fdr: Vec<EpsilonEstimate>,
    /// `E[ |{j in S & H0 : KL_j <= eps}| / (|S| + 1/q) ]`
    pub restricted_modified_fdr: Vec<EpsilonEstimate>,
    /// `E[ |S & H0| / (|S| + 1/q) ]`
    pub modified_fdr: Estimate,
    pub bound_report: BoundReport,
    pub checks: BoundChecks,
    pub null_signs: Vec<NullSignSummary>,
    pub nonconverged_fits: usize,
    pub per_replicate: Vec<ReplicateSummary>,
}

/// Summarizes replicate records against the truth.
pub fn estimate_fdr_power(
    records: &[ReplicateRecord],
    truth: &SimulationTruth,
    q: f64,
    epsilon_grid: &[f64],
) -> Result<MonteCarloReport> {
    if records.is_empty() {
        return Err(KnockoffError::Invalid("no replicate records".into()));
    }
    let reps = records.len();
    let nulls = truth.nulls();
    let k = truth.nonnull_set.len();
    let inv_q = 1.0 / q;

    let mut fdp = Vec::with_capacity(reps);
    let mut tpp = Vec::with_capacity(reps);
    let mut mod_fdp = Vec::with_capacity(reps);
    let mut restricted = vec![Vec::with_capacity(reps); epsilon_grid.len()];
    let mut restricted_mod = vec![Vec::with_capacity(reps); epsilon_grid.len()];
    let mut exceed = vec![0usize; epsilon_grid.len()];
    let mut per_replicate = Vec::with_capacity(reps);

    for rec in records {
        let s = rec.selected.len() as f64;
        let false_sel: Vec<usize> = rec.selected.iter().copied().filter(|&j| truth.is_null(j)).collect();
        let v = false_sel.len() as f64;
        fdp.push(v / s.max(1.0));
        tpp.push(if k == 0 { 0.0 } else { (rec.selected.len() - false_sel.len()) as f64 / k as f64 });
        mod_fdp.push(v / (s + inv_q));
        let max_kl_null = nulls.iter().map(|&j| rec.kl_hat[j]).fold(f64::NEG_INFINITY, f64::max);
        for (e, &eps) in epsilon_grid.iter().enumerate() {
            let count = false_sel.iter().filter(|&&j| rec.kl_hat[j] <= eps).count() as f64;
            restricted[e].push(count / s.max(1.0));
            restricted_mod[e].push(count / (s + inv_q));
            if max_kl_null > eps {
                exceed[e] += 1;
            }
        }
        per_replicate.push(ReplicateSummary {
            selected_count: rec.selected.len(),
            false_count: false_sel.len(),
            max_kl_null,
        });
    }

    let exceedance: Vec<f64> = exceed.iter().map(|&c| c as f64 / reps as f64).collect();
    let bound_report = diagnostics::inflation_bound(q, epsilon_grid, &exceedance, Some(reps))?;
    let per_eps = |vals: &[Vec<f64>]| -> Vec<EpsilonEstimate> {
        epsilon_grid
            .iter()
            .zip(vals)
            .map(|(&epsilon, v)| EpsilonEstimate { epsilon, estimate: Estimate::from_values(v), bound: q * epsilon.exp() })
            .collect()
    };
    let restricted_fdr = per_eps(&restricted);
    let restricted_modified_fdr = per_eps(&restricted_mod);
    let empirical_fdr = Estimate::from_values(&fdp);
    let modified_fdr = Estimate::from_values(&mod_fdp);

    let null_signs = nulls
        .iter()
        .map(|&j| {
            let nonzero = records.iter().filter(|r| r.w[j] != 0.0).count();
            let positive = records.iter().filter(|r| r.w[j] > 0.0).count();
            NullSignSummary { feature: j, positive, nonzero, frequency: Estimate::proportion(positive, nonzero) }
        })
        .collect();

    let checks = BoundChecks {
        restricted_fdr_within_bound: restricted_fdr.iter().all(|e| e.estimate.at_most(e.bound, 3.0)),
        restricted_modified_fdr_within_bound: restricted_modified_fdr.iter().all(|e| e.estimate.at_most(e.bound, 3.0)),
        fdr_within_best_bound: empirical_fdr.at_most(bound_report.best_bound, 3.0),
        modified_fdr_within_best_bound: modified_fdr.at_most(bound_report.modified_fdr_bound, 3.0),
    };

    Ok(MonteCarloReport {
        replicates: reps,
        q,
        empirical_power: Estimate::from_values(&tpp),
        empirical_fdr,
        restricted_fdr,
        restricted_modified_fdr,
        modified_fdr,
        bound_report,
        checks,
        null_signs,
        nonconverged_fits: records.iter().filter(|r| !r.converged).count(),
        per_replicate,
    })
}

/// Prepares the scenario, runs every replicate and summarizes.
pub fn simulate(config: &ScenarioConfig) -> Result<MonteCarloReport> {
    let scenario = Scenario::prepare(config)?;
    let records = run_replicates(&scenario)?;
    let mut report = estimate_fdr_power(&records, &scenario.truth, config.q, &config.grid())?;
    report.bound_report.delta_theta = Some(scenario.delta_theta);
    report.bound_report.lemma4_bound = Some(diagnostics::lemma4_bound(scenario.delta_theta, config.n, config.p));
    Ok(report)
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(KnockoffError::Invalid("thread count must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| KnockoffError::Invalid(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            n: 60,
            p: 8,
            signal_count: 2,
            signal_amplitude: 2.0,
            replicates: 8,
            seed: 3,
            ..ScenarioConfig::reference()
        }
    }

    #[test]
    fn ar1_examples() {
        let m = gen_ar1_precision(4, 0.0).unwrap();
        assert_eq!(m.precision(), &DMatrix::identity(4, 4));
        let m = gen_ar1_precision(2, 0.5).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]) / 0.75;
        assert!(max_abs_diff(m.precision(), &want) < 1e-15);
        for (p, rho) in [(1, 0.3), (5, -0.7), (20, 0.9)] {
            let m = gen_ar1_precision(p, rho).unwrap();
            let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
            assert!(max_abs_diff(&(m.precision() * sigma), &DMatrix::identity(p, p)) < 1e-10);
        }
        assert!(gen_ar1_precision(3, 1.0).is_err());
    }

    #[test]
    fn perturbation_hits_target() {
        let m = gen_ar1_precision(10, 0.5).unwrap();
        assert_eq!(perturb_precision(&m, 0.0, 1).unwrap().matrix(), m.precision());
        for target in [0.02, 0.05, 0.3] {
            let est = perturb_precision(&m, target, 9).unwrap();
            let d = diagnostics::delta_theta(&m, &est).unwrap();
            assert!((d - target).abs() < 1e-6, "{d} vs {target}");
            let t = est.matrix();
            assert_eq!(t, &t.transpose());
            assert!((0..10).all(|j| t[(j, j)] > 0.0));
        }
        assert!(perturb_precision(&m, 50.0, 9).is_err());
    }

    #[test]
    fn nodewise_independent_columns() {
        let model = GaussianModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 0.25]))).unwrap();
        let x = model.sample(20_000, &mut rng::seeded(4)).unwrap();
        let est = nodewise_estimate(&x, 0.1).unwrap();
        for j in 0..3 {
            let var = x.column(j).norm_squared() / 20_000.0;
            assert!((est.matrix()[(j, j)] * var - 1.0).abs() < 0.05);
        }
        let big = nodewise_estimate(&x, 1.0).unwrap();
        for j in 0..3 {
            let var = x.column(j).norm_squared() / 20_000.0;
            assert!((big.matrix()[(j, j)] - 1.0 / var).abs() < 1e-12);
            for k in 0..3 {
                if k != j {
                    assert_eq!(big.matrix()[(j, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn nodewise_rejects_constant_zero_column() {
        let mut x = DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64 * 0.1 + (i as f64).sin());
        x.set_column(1, &DVector::zeros(10));
        assert!(matches!(nodewise_estimate(&x, 0.1), Err(KnockoffError::ZeroResidualVariance(1))));
    }

    #[test]
    fn signal_placement() {
        let t = SimulationTruth::new(50, 10, 3.5);
        assert_eq!(t.nonnull_set, vec![0, 5, 10, 15, 20, 25, 30, 35, 40, 45]);
        assert_eq!(t.beta[0], 3.5);
        assert_eq!(t.beta[5], -3.5);
        let zero = SimulationTruth::new(10, 3, 0.0);
        assert!(zero.nonnull_set.is_empty());
        assert_eq!(SimulationTruth::new(3, 3, 1.0).nonnull_set, vec![0, 1, 2]);
    }

    #[test]
    fn replicates_are_deterministic() {
        let s = Scenario::prepare(&small_config()).unwrap();
        let a = run_replicate(&s, 5).unwrap();
        let b = run_replicate(&s, 5).unwrap();
        assert_eq!(a, b);
        let all = run_replicates(&s).unwrap();
        assert_eq!(all[5], a);
        // thread count does not matter
        let one = with_threads(Some(1), || run_replicates(&s)).unwrap().unwrap();
        assert_eq!(one, all);
    }

    #[test]
    fn exact_knockoffs_have_zero_kl() {
        let s = Scenario::prepare(&small_config()).unwrap();
        let r = run_replicate(&s, 0).unwrap();
        assert!(r.kl_hat.iter().all(|&v| v == 0.0));
        assert_eq!(s.delta_theta, 0.0);
    }

    #[test]
    fn empty_selections_summarize_to_zero() {
        let truth = SimulationTruth::new(4, 1, 1.0);
        let recs: Vec<ReplicateRecord> = (0..5)
            .map(|i| ReplicateRecord { index: i, selected: vec![], w: vec![0.0; 4], kl_hat: vec![0.0; 4], lambda_used: None, converged: true })
            .collect();
        let r = estimate_fdr_power(&recs, &truth, 0.1, &[0.0, 1.0]).unwrap();
        assert_eq!(r.empirical_fdr.mean, 0.0);
        assert_eq!(r.empirical_power.mean, 0.0);
        assert_eq!(r.modified_fdr.mean, 0.0);
    }

    #[test]
    fn restricted_fdr_at_infinity_is_fdr() {
        let s = Scenario::prepare(&ScenarioConfig {
            precision_mode: PrecisionMode::ColumnPerturb { delta_target: 0.1 },
            replicates: 20,
            ..small_config()
        })
        .unwrap();
        let recs = run_replicates(&s).unwrap();
        let r = estimate_fdr_power(&recs, &s.truth, 0.2, &[0.0, f64::INFINITY]).unwrap();
        assert_eq!(r.restricted_fdr[1].estimate.mean, r.empirical_fdr.mean);
        assert_eq!(r.bound_report.exceedance[1], 0.0);
    }

    #[test]
    fn simulate_is_reproducible() {
        let cfg = ScenarioConfig { statistic: StatisticKind::MarginalCorrelationDifference, ..small_config() };
        let a = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logistic_response_is_binary() {
        let cfg = ScenarioConfig { response_kind: ResponseKind::Logistic, ..small_config() };
        let s = Scenario::prepare(&cfg).unwrap();
        let x = s.sampler.sample(30, &mut rng::seeded(1));
        let y = s.response(&x, &mut rng::seeded(2));
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let mut cfg = small_config();
        cfg.precision_mode = PrecisionMode::NodewiseLasso { unlabeled_n: 500, lambda_fraction: 0.05 };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
        let bad_mode = serde_json::json!({"n": 10, "p": 2, "signal_count": 0, "signal_amplitude": 0.0, "q": 0.1,
            "replicates": 1, "precision_mode": {"mode": "exact", "extra": 2}});
        assert!(serde_json::from_value::<ScenarioConfig>(bad_mode).is_err());
    }

    #[test]
    fn validation() {
        assert!(ScenarioConfig { signal_count: 9, ..small_config() }.validate().is_err());
        assert!(ScenarioConfig { replicates: 0, ..small_config() }.validate().is_err());
        assert!(ScenarioConfig { format_version: 2, ..small_config() }.validate().is_err());
        assert!(small_config().validate().is_ok());
    }
}
