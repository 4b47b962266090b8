//! The randomized single-feature test that turns a large observed KL into an
//! FDR violation, and the lower bound it attains.
//!
//! `psi = 1{B = 1, KL_j > 0} + 1{B' = 1, KL_j = 0}` with `B ~ Bern(2q)` and
//! `B' ~ Bern(q)`. When `X_j | X_{-j}` follows the knockoff model `Q_j`, `KL_j`
//! is symmetric about zero and `P(psi = 1) = q`; under the true `P_j` the level
//! rises to at least `q (1 + c (1 - e^{-eps}))` whenever `P(KL_j >= eps) >= c`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, ConditionalLogDensity, GaussianConditionals};
use crate::error::{KnockoffError, Result};
use crate::gaussian::{GaussianModel, GaussianRowSampler, KnockoffMechanism, PrecisionEstimate};
use crate::mc::Estimate;
use crate::rng::{self, StreamRng};
use crate::simulator;
use crate::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversaryOutcome {
    pub psi: bool,
    pub b_draw: bool,
    pub b_prime_draw: bool,
    pub kl_hat_j: f64,
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(KnockoffError::Invalid(format!("q = {q} must lie in (0, 1/2]")));
    }
    Ok(())
}

/// Samples knockoffs for `x`, the two coins, and evaluates `psi`.
pub fn psi_test<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    mech: &KnockoffMechanism,
    j: usize,
    q: f64,
    p_conds: &dyn ConditionalLogDensity,
    q_conds: &dyn ConditionalLogDensity,
    rng: &mut R,
) -> Result<AdversaryOutcome> {
    check_q(q)?;
    let xt = mech.sample_with(x, rng)?;
    let b_draw = rng.random::<f64>() < 2.0 * q;
    let b_prime_draw = rng.random::<f64>() < q;
    let kl_hat_j = diagnostics::observed_kl_feature(j, x, &xt, p_conds, q_conds)?;
    let psi = (b_draw && kl_hat_j > 0.0) || (b_prime_draw && kl_hat_j == 0.0);
    Ok(AdversaryOutcome { psi, b_draw, b_prime_draw, kl_hat_j })
}

/// Same as [`psi_test`] with a seed instead of a generator.
pub fn psi_test_seeded(
    x: &FeatureMatrix,
    mech: &KnockoffMechanism,
    j: usize,
    q: f64,
    p_conds: &dyn ConditionalLogDensity,
    q_conds: &dyn ConditionalLogDensity,
    seed: u64,
) -> Result<AdversaryOutcome> {
    psi_test(x, mech, j, q, p_conds, q_conds, &mut rng::seeded(seed))
}

/// `q (1 + c (1 - e^{-eps}))`.
pub fn lower_bound_value(q: f64, c: f64, epsilon: f64) -> f64 {
    q * (1.0 + c * (1.0 - (-epsilon).exp()))
}

fn one() -> u32 {
    1
}

/// Gaussian adversary scenario: `P = N(0, theta^{-1})` with AR(1) `theta`,
/// `Q` from a perturbed precision at columnwise error `delta_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    #[serde(default = "one")]
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub feature: usize,
    pub q: f64,
    #[serde(default)]
    pub ar1_rho: f64,
    pub delta_theta: f64,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self { format_version: 1, n: 50, p: 10, feature: 0, q: 0.1, ar1_rho: 0.0, delta_theta: 0.3, replicates: 5000, seed: 0 }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != 1 {
            return Err(KnockoffError::Invalid(format!("unsupported format_version {}", self.format_version)));
        }
        if self.p < 2 || self.feature >= self.p {
            return Err(KnockoffError::Invalid("need p >= 2 and feature < p".into()));
        }
        if self.replicates == 0 {
            return Err(KnockoffError::Invalid("replicates must be >= 1".into()));
        }
        if !(self.delta_theta >= 0.0) {
            return Err(KnockoffError::Invalid("delta_theta must be >= 0".into()));
        }
        check_q(self.q)
    }
}

/// Both laws and the mechanism, fixed for all replicates.
#[derive(Debug, Clone)]
pub struct AdversaryScenario {
    pub config: AdversaryConfig,
    pub model: GaussianModel,
    pub estimate: PrecisionEstimate,
    pub mechanism: KnockoffMechanism,
    pub p_conds: GaussianConditionals,
    pub q_conds: GaussianConditionals,
    sampler: GaussianRowSampler,
}

impl AdversaryScenario {
    pub fn new(config: AdversaryConfig) -> Result<Self> {
        config.validate()?;
        let model = simulator::gen_ar1_precision(config.p, config.ar1_rho)?;
        let estimate = simulator::perturb_precision(&model, config.delta_theta, config.seed)?;
        Self::from_parts(config, model, estimate)
    }

    pub fn from_parts(config: AdversaryConfig, model: GaussianModel, estimate: PrecisionEstimate) -> Result<Self> {
        config.validate()?;
        let mechanism = KnockoffMechanism::equicorrelated(estimate.clone())?;
        let p_conds = GaussianConditionals::from_model(&model)?;
        let q_conds = GaussianConditionals::from_estimate(&estimate)?;
        let sampler = GaussianRowSampler::new(&model)?;
        Ok(Self { config, model, estimate, mechanism, p_conds, q_conds, sampler })
    }

    /// `n` rows from `P`.
    pub fn sample_p(&self, rng: &mut StreamRng) -> FeatureMatrix {
        self.sampler.sample(self.config.n, rng)
    }

    /// `n` rows with `X_{-j}` from `P` and `X_j | X_{-j}` from `Q_j`.
    pub fn sample_q(&self, rng: &mut StreamRng) -> FeatureMatrix {
        let mut x = self.sample_p(rng);
        let j = self.config.feature;
        let cond = self.q_conds.conditional(j);
        let sd = cond.variance.sqrt();
        let means = self.q_conds.means(&x);
        for i in 0..x.nrows() {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = means[(i, j)] + sd * z;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryReport {
    pub config: AdversaryConfig,
    pub delta_theta: f64,
    pub level_under_q: Estimate,
    pub level_under_p: Estimate,
    /// 25th percentile of the positive KL draws under `P`.
    pub epsilon: f64,
    /// Fraction of `P` draws with `KL_j >= epsilon`.
    pub c_hat: f64,
    pub lower_bound: f64,
    pub kl_positive_under_q: usize,
    pub kl_negative_under_q: usize,
    pub mean_kl_under_p: f64,
    /// `|level_Q - q| <= 3 SE`.
    pub level_exact_under_q: bool,
    /// `level_P >= lower_bound - 3 SE`.
    pub violation_under_p: bool,
}

/// Quantile by the nearest-rank rule on sorted data.
fn lower_quartile(sorted: &[f64]) -> f64 {
    let k = ((sorted.len() as f64) * 0.25).ceil().max(1.0) as usize;
    sorted[k - 1]
}

/// Monte Carlo estimate of `P(psi = 1)` under the `Q`-side and `P`-side laws.
pub fn monte_carlo_levels(scenario: &AdversaryScenario, reps: usize, seed: u64) -> Result<AdversaryReport> {
    if reps == 0 {
        return Err(KnockoffError::Invalid("replicates must be >= 1".into()));
    }
    let cfg = &scenario.config;
    let draws: Vec<(AdversaryOutcome, AdversaryOutcome)> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let run = |stream_index: u64, q_side: bool| {
                let mut r = rng::stream(seed, stream_index);
                let x = if q_side { scenario.sample_q(&mut r) } else { scenario.sample_p(&mut r) };
                psi_test(&x, &scenario.mechanism, cfg.feature, cfg.q, &scenario.p_conds, &scenario.q_conds, &mut r)
            };
            let under_q = run(2 * i as u64, true)?;
            let under_p = run(2 * i as u64 + 1, false)?;
            Ok((under_q, under_p))
        })
        .collect::<Result<Vec<_>>>()?;

    let level_under_q = Estimate::proportion(draws.iter().filter(|d| d.0.psi).count(), reps);
    let level_under_p = Estimate::proportion(draws.iter().filter(|d| d.1.psi).count(), reps);
    let kl_p: Vec<f64> = draws.iter().map(|d| d.1.kl_hat_j).collect();
    let mut positive: Vec<f64> = kl_p.iter().copied().filter(|&v| v > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let epsilon = if positive.is_empty() { 0.0 } else { lower_quartile(&positive) };
    let c_hat = kl_p.iter().filter(|&&v| v >= epsilon).count() as f64 / reps as f64;
    let lower_bound = lower_bound_value(cfg.q, c_hat, epsilon);

    Ok(AdversaryReport {
        config: cfg.clone(),
        delta_theta: diagnostics::delta_theta(&scenario.model, &scenario.estimate)?,
        level_exact_under_q: level_under_q.within(cfg.q, 3.0),
        violation_under_p: level_under_p.mean >= lower_bound - 3.0 * level_under_p.se,
        level_under_q,
        level_under_p,
        epsilon,
        c_hat,
        lower_bound,
        kl_positive_under_q: draws.iter().filter(|d| d.0.kl_hat_j > 0.0).count(),
        kl_negative_under_q: draws.iter().filter(|d| d.0.kl_hat_j < 0.0).count(),
        mean_kl_under_p: kl_p.iter().sum::<f64>() / reps as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_bound_examples() {
        assert_eq!(lower_bound_value(0.1, 0.7, 0.0), 0.1);
        assert!((lower_bound_value(0.1, 0.5, 0.2) - 0.1 * (1.0 + 0.5 * (1.0 - (-0.2f64).exp()))).abs() < 1e-15);
        assert!((lower_bound_value(0.1, 0.5, 0.2) - 0.1091).abs() < 1e-4);
        // c = 1, small eps: close to q e^eps
        let eps = 1e-3;
        let lb = lower_bound_value(0.1, 1.0, eps);
        assert!((lb - 0.1 * eps.exp()).abs() < 1e-6);
    }

    #[test]
    fn psi_definition() {
        let model = GaussianModel::new(nalgebra::DMatrix::identity(3, 3)).unwrap();
        let mech = KnockoffMechanism::equicorrelated(model.as_estimate()).unwrap();
        let conds = GaussianConditionals::from_model(&model).unwrap();
        let mut r = rng::seeded(3);
        let x = model.sample(20, &mut r).unwrap();
        for seed in 0..50 {
            let o = psi_test_seeded(&x, &mech, 1, 0.2, &conds, &conds, seed).unwrap();
            assert_eq!(o.kl_hat_j, 0.0);
            assert_eq!(o.psi, o.b_prime_draw);
        }
    }

    #[test]
    fn exact_case_has_level_q_on_both_sides() {
        let cfg = AdversaryConfig { delta_theta: 0.0, replicates: 2000, n: 10, p: 4, ..Default::default() };
        let s = AdversaryScenario::new(cfg).unwrap();
        let r = monte_carlo_levels(&s, 2000, 5).unwrap();
        assert!(r.level_under_q.within(0.1, 3.0), "{:?}", r.level_under_q);
        assert!(r.level_under_p.within(0.1, 3.0), "{:?}", r.level_under_p);
        assert_eq!(r.kl_positive_under_q, 0);
    }

    #[test]
    fn zero_rows_means_zero_kl() {
        let cfg = AdversaryConfig { n: 0, p: 3, delta_theta: 0.2, replicates: 1000, ..Default::default() };
        let s = AdversaryScenario::new(cfg).unwrap();
        let r = monte_carlo_levels(&s, 1000, 1).unwrap();
        assert_eq!(r.epsilon, 0.0);
        assert!(r.level_under_q.within(0.1, 3.0) && r.level_under_p.within(0.1, 3.0));
    }

    #[test]
    fn rejects_bad_q() {
        let cfg = AdversaryConfig { q: 0.6, ..Default::default() };
        assert!(AdversaryScenario::new(cfg).is_err());
    }
}
