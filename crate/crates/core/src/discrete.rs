//! Exact small-alphabet knockoffs by enumeration.
//!
//! Everything here works on full probability tables, never on samples, so it
//! can serve as ground truth for the sampling-based checks elsewhere. Sizes
//! are capped at `p <= 4` features with alphabets of at most 5 symbols.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::diagnostics::ConditionalLogDensity;
use crate::error::{KnockoffError, Result};
use crate::rng;

pub const MAX_FEATURES: usize = 4;
pub const MAX_ALPHABET: usize = 5;
const PMF_TOL: f64 = 1e-12;

/// Mixed-radix indexing with the first coordinate varying fastest.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    fn new(sizes: &[usize]) -> Self {
        let mut strides = Vec::with_capacity(sizes.len());
        let mut acc = 1;
        for &s in sizes {
            strides.push(acc);
            acc *= s;
        }
        Self { sizes: sizes.to_vec(), strides, len: acc }
    }

    fn encode(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    fn decode_into(&self, mut idx: usize, out: &mut [usize]) {
        for (o, &s) in out.iter_mut().zip(&self.sizes) {
            *o = idx % s;
            idx /= s;
        }
    }

    fn coord(&self, idx: usize, k: usize) -> usize {
        (idx / self.strides[k]) % self.sizes[k]
    }

    /// `idx` with coordinate `k` replaced by `v`.
    fn with_coord(&self, idx: usize, k: usize, v: usize) -> usize {
        idx - self.coord(idx, k) * self.strides[k] + v * self.strides[k]
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes.len() > MAX_FEATURES {
        return Err(KnockoffError::Invalid(format!(
            "discrete oracle supports 1..={MAX_FEATURES} features, got {}",
            sizes.len()
        )));
    }
    if let Some(s) = sizes.iter().find(|&&s| s == 0 || s > MAX_ALPHABET) {
        return Err(KnockoffError::Invalid(format!(
            "alphabet size {s} outside 1..={MAX_ALPHABET}"
        )));
    }
    Ok(())
}

fn validate_pmf(pmf: &[f64], expected_len: usize) -> Result<()> {
    if pmf.len() != expected_len {
        return Err(KnockoffError::Shape(format!(
            "pmf has {} entries, expected {expected_len}",
            pmf.len()
        )));
    }
    if let Some(v) = pmf.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(KnockoffError::Invalid(format!("pmf entry {v} is not a probability")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > PMF_TOL {
        return Err(KnockoffError::Invalid(format!("pmf sums to {total}, expected 1")));
    }
    Ok(())
}

/// Joint pmf of a small discrete feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    grid: Grid,
    pmf: Vec<f64>,
}

impl DiscreteJoint {
    /// `pmf` is indexed with feature 0 varying fastest.
    pub fn new(support_sizes: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        validate_sizes(&support_sizes)?;
        let grid = Grid::new(&support_sizes);
        validate_pmf(&pmf, grid.len)?;
        Ok(Self { grid, pmf })
    }

    /// Strictly positive random pmf (normalized exponentials).
    pub fn random<R: Rng + ?Sized>(support_sizes: Vec<usize>, rng: &mut R) -> Result<Self> {
        validate_sizes(&support_sizes)?;
        let grid = Grid::new(&support_sizes);
        let raw: Vec<f64> = (0..grid.len).map(|_| 0.05 + Distribution::<f64>::sample(&Exp1, rng)).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self { grid, pmf: raw.into_iter().map(|v| v / total).collect() })
    }

    pub fn product(marginals: &[Vec<f64>]) -> Result<Self> {
        let sizes: Vec<usize> = marginals.iter().map(Vec::len).collect();
        validate_sizes(&sizes)?;
        let grid = Grid::new(&sizes);
        let mut coords = vec![0; sizes.len()];
        let pmf = (0..grid.len)
            .map(|idx| {
                grid.decode_into(idx, &mut coords);
                coords.iter().enumerate().map(|(k, &c)| marginals[k][c]).product()
            })
            .collect();
        Self::new(sizes, pmf)
    }

    pub fn support_sizes(&self) -> &[usize] {
        &self.grid.sizes
    }

    pub fn dim(&self) -> usize {
        self.grid.sizes.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, x: &[usize]) -> f64 {
        self.pmf[self.grid.encode(x)]
    }

    /// Conditional table of feature `j` given the rest.
    pub fn conditional(&self, j: usize) -> Result<DiscreteConditional> {
        DiscreteConditional::from_joint(self, j)
    }
}

/// `P(x_j = . | x_{-j})` for every configuration of the other features.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteConditional {
    grid: Grid,
    feature: usize,
    // keyed by the grid index of x with x_j set to 0
    table: Vec<Vec<f64>>,
}

impl DiscreteConditional {
    pub fn from_joint(joint: &DiscreteJoint, j: usize) -> Result<Self> {
        let grid = joint.grid.clone();
        if j >= grid.sizes.len() {
            return Err(KnockoffError::Shape(format!("feature {j} out of range")));
        }
        let s = grid.sizes[j];
        let mut table = vec![Vec::new(); grid.len];
        for base in 0..grid.len {
            if grid.coord(base, j) != 0 {
                continue;
            }
            let w: Vec<f64> = (0..s).map(|v| joint.pmf[grid.with_coord(base, j, v)]).collect();
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(KnockoffError::Invalid(format!(
                    "conditioning configuration for feature {j} has zero mass"
                )));
            }
            table[base] = w.into_iter().map(|v| v / total).collect();
        }
        Ok(Self { grid, feature: j, table })
    }

    pub fn feature(&self) -> usize {
        self.feature
    }

    /// Probability of `x_j = value` given the other entries of `x`.
    pub fn prob(&self, value: usize, x: &[usize]) -> f64 {
        let base = self.grid.with_coord(self.grid.encode(x), self.feature, 0);
        self.table[base][value]
    }
}

/// Joint pmf of `(X, X_tilde)` over the squared product space.
#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffJoint {
    p: usize,
    grid: Grid,
    pmf: Vec<f64>,
}

impl KnockoffJoint {
    pub fn new(support_sizes: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        validate_sizes(&support_sizes)?;
        let p = support_sizes.len();
        let sizes: Vec<usize> = support_sizes.iter().chain(support_sizes.iter()).copied().collect();
        let grid = Grid::new(&sizes);
        validate_pmf(&pmf, grid.len)?;
        Ok(Self { p, grid, pmf })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, x: &[usize], xt: &[usize]) -> f64 {
        let coords: Vec<usize> = x.iter().chain(xt).copied().collect();
        self.pmf[self.grid.encode(&coords)]
    }

    /// Marginal law of the original features.
    pub fn marginal_x(&self) -> DiscreteJoint {
        let sizes = self.grid.sizes[..self.p].to_vec();
        let inner = Grid::new(&sizes);
        let mut pmf = vec![0.0; inner.len];
        for (idx, &m) in self.pmf.iter().enumerate() {
            pmf[idx % inner.len] += m;
        }
        DiscreteJoint { grid: inner, pmf }
    }

    /// Marginal law of the knockoffs.
    pub fn marginal_xt(&self) -> DiscreteJoint {
        let sizes = self.grid.sizes[..self.p].to_vec();
        let inner = Grid::new(&sizes);
        let mut pmf = vec![0.0; inner.len];
        for (idx, &m) in self.pmf.iter().enumerate() {
            pmf[idx / inner.len] += m;
        }
        DiscreteJoint { grid: inner, pmf }
    }

    fn swap_index(&self, idx: usize, subset: &[usize], scratch: &mut [usize]) -> usize {
        self.grid.decode_into(idx, scratch);
        for &j in subset {
            scratch.swap(j, j + self.p);
        }
        self.grid.encode(scratch)
    }
}

/// SCIP: for `j = 1..p`, draw `X_tilde_j` from the law of `X_j` given
/// `(X_{-j}, X_tilde_{1:j-1})` under the joint built so far. Returned as an
/// exact pmf; branches of zero mass are skipped.
pub fn scip_knockoffs(joint: &DiscreteJoint) -> Result<KnockoffJoint> {
    let p = joint.dim();
    let sizes: Vec<usize> = joint.grid.sizes.iter().chain(joint.grid.sizes.iter()).copied().collect();
    let grid = Grid::new(&sizes);
    // knockoff coordinates not yet drawn sit at 0
    let mut state = vec![0.0; grid.len];
    state[..joint.grid.len].copy_from_slice(&joint.pmf);

    for j in 0..p {
        let s = grid.sizes[j];
        let mut next = vec![0.0; grid.len];
        for (idx, &mass) in state.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let weights: Vec<f64> = (0..s).map(|v| state[grid.with_coord(idx, j, v)]).collect();
            let total: f64 = weights.iter().sum();
            for (b, w) in weights.into_iter().enumerate() {
                if w > 0.0 {
                    next[grid.with_coord(idx, p + j, b)] += mass * w / total;
                }
            }
        }
        state = next;
    }
    Ok(KnockoffJoint { p, grid, pmf: state })
}

/// Max over the product space of `|pmf(x, xt) - pmf((x, xt)_swap(A))|`.
pub fn check_exchangeability(kj: &KnockoffJoint, subset: &[usize]) -> Result<f64> {
    if let Some(&j) = subset.iter().find(|&&j| j >= kj.p) {
        return Err(KnockoffError::Shape(format!("swap index {j} out of range")));
    }
    let mut scratch = vec![0; 2 * kj.p];
    Ok((0..kj.pmf.len())
        .map(|idx| (kj.pmf[idx] - kj.pmf[kj.swap_index(idx, subset, &mut scratch)]).abs())
        .fold(0.0, f64::max))
}

/// All subsets of `0..p` in increasing bitmask order.
pub fn all_subsets(p: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..(1 << p)).map(move |mask| (0..p).filter(|&j| mask & (1 << j) != 0).collect())
}

/// A knockoff sampling law `P(x_tilde | x)` given as a full table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMechanism {
    p: usize,
    grid: Grid,
    // rows indexed by x, columns by x_tilde
    table: Vec<f64>,
}

impl DiscreteMechanism {
    /// Conditional `kj(x, xt) / sum_xt kj(x, xt)`; `x` with zero mass gets `xt = x`.
    pub fn from_joint(kj: &KnockoffJoint) -> Self {
        // x and xt range over the same number of configurations
        let nx = Grid::new(&kj.grid.sizes[..kj.p]).len;
        let mut table = kj.pmf.clone();
        for x in 0..nx {
            let total: f64 = (0..nx).map(|xt| kj.pmf[x + xt * nx]).sum();
            for xt in 0..nx {
                let v = &mut table[x + xt * nx];
                *v = if total > 0.0 { *v / total } else if xt == x { 1.0 } else { 0.0 };
            }
        }
        Self { p: kj.p, grid: kj.grid.clone(), table }
    }

    /// Joint of `(X, X_tilde)` when `X ~ joint` and knockoffs follow this mechanism.
    pub fn joint_under(&self, joint: &DiscreteJoint) -> Result<KnockoffJoint> {
        if joint.grid.sizes[..] != self.grid.sizes[..self.p] {
            return Err(KnockoffError::Shape("feature law and mechanism disagree on support".into()));
        }
        let nx = joint.grid.len;
        let pmf = (0..self.grid.len).map(|idx| joint.pmf[idx % nx] * self.table[idx]).collect();
        Ok(KnockoffJoint { p: self.p, grid: self.grid.clone(), pmf })
    }
}

/// Compares both sides of the likelihood-ratio identity for the swap of
/// `(X_j, X_tilde_j) = (a, b)` against `(b, a)` given the rest.
///
/// `x` and `xt` carry the conditioning values; their entries at `j` are ignored.
/// Returns `(lhs, rhs)` where lhs comes from the joint table and rhs is
/// `P_j(a) Q_j(b) / (Q_j(a) P_j(b))`.
pub fn likelihood_ratio_check(
    kj: &KnockoffJoint,
    p_cond: &DiscreteConditional,
    q_cond: &DiscreteConditional,
    a: usize,
    b: usize,
    x: &[usize],
    xt: &[usize],
) -> Result<(f64, f64)> {
    let j = p_cond.feature();
    if q_cond.feature() != j {
        return Err(KnockoffError::Invalid("P and Q conditionals refer to different features".into()));
    }
    if x.len() != kj.p || xt.len() != kj.p {
        return Err(KnockoffError::Shape("configuration length must equal p".into()));
    }
    let mut xa = x.to_vec();
    let mut xta = xt.to_vec();
    xa[j] = a;
    xta[j] = b;
    let num = kj.prob(&xa, &xta);
    xa[j] = b;
    xta[j] = a;
    let den = kj.prob(&xa, &xta);
    if den == 0.0 || num == 0.0 {
        return Err(KnockoffError::Unidentifiable(format!(
            "configuration (a={a}, b={b}) for feature {j} has zero mass"
        )));
    }
    let rhs = p_cond.prob(a, x) * q_cond.prob(b, x) / (q_cond.prob(a, x) * p_cond.prob(b, x));
    Ok((num / den, rhs))
}

/// Independent Bernoulli features, used as a conditional model when the
/// likelihood ratio needs a uniform bound (`|logit p_j - logit q_j| <= delta`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependentBernoulli {
    pub probs: Vec<f64>,
}

impl IndependentBernoulli {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(v) = probs.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(KnockoffError::Invalid(format!("bernoulli probability {v} not in (0,1)")));
        }
        Ok(Self { probs })
    }

    /// Shifts every logit by `-shift`.
    pub fn logit_shifted(&self, shift: f64) -> Self {
        let probs = self
            .probs
            .iter()
            .map(|&p| {
                let l = (p / (1.0 - p)).ln() - shift;
                1.0 / (1.0 + (-l).exp())
            })
            .collect();
        Self { probs }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> crate::FeatureMatrix {
        let p = self.probs.len();
        let mut m = crate::FeatureMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                m[(i, j)] = if rng.random::<f64>() < self.probs[j] { 1.0 } else { 0.0 };
            }
        }
        m
    }
}

impl ConditionalLogDensity for IndependentBernoulli {
    fn dim(&self) -> usize {
        self.probs.len()
    }

    fn log_density(&self, j: usize, value: f64, _row: &[f64]) -> f64 {
        let p = self.probs[j];
        if value == 1.0 {
            p.ln()
        } else if value == 0.0 {
            (1.0 - p).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Outcome of one named check in the oracle suite.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

pub const EXCHANGEABILITY_TOL: f64 = 1e-12;
pub const LIKELIHOOD_RATIO_TOL: f64 = 1e-10;

fn random_sizes<R: Rng + ?Sized>(rng: &mut R, max_p: usize) -> Vec<usize> {
    let p = rng.random_range(1..=max_p);
    (0..p).map(|_| rng.random_range(2..=3)).collect()
}

/// Random-instance suite: SCIP exchangeability over every subset, marginal
/// recovery, and the likelihood-ratio identity on every positive-mass
/// configuration. Instances use `p <= 3` and alphabets of 2 or 3 symbols.
pub fn run_verification(seed: u64, instances: usize) -> Result<VerificationReport> {
    let mut rng = rng::seeded(seed);
    let mut exch_dev: f64 = 0.0;
    let mut marg_dev: f64 = 0.0;
    let mut lr_dev: f64 = 0.0;
    let mut lr_configs = 0usize;

    for _ in 0..instances {
        let sizes = random_sizes(&mut rng, 3);
        let q_joint = DiscreteJoint::random(sizes.clone(), &mut rng)?;
        let p_joint = DiscreteJoint::random(sizes.clone(), &mut rng)?;
        let kj_q = scip_knockoffs(&q_joint)?;
        for subset in all_subsets(sizes.len()) {
            exch_dev = exch_dev.max(check_exchangeability(&kj_q, &subset)?);
        }
        let recovered = kj_q.marginal_x();
        marg_dev = marg_dev.max(
            recovered.pmf.iter().zip(&q_joint.pmf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );

        let mech = DiscreteMechanism::from_joint(&kj_q);
        let kj_p = mech.joint_under(&p_joint)?;
        let p = sizes.len();
        let half = Grid::new(&sizes);
        let mut x = vec![0; p];
        let mut xt = vec![0; p];
        for j in 0..p {
            let pc = p_joint.conditional(j)?;
            let qc = q_joint.conditional(j)?;
            for xi in 0..half.len {
                half.decode_into(xi, &mut x);
                for xti in 0..half.len {
                    half.decode_into(xti, &mut xt);
                    for a in 0..sizes[j] {
                        for b in 0..sizes[j] {
                            match likelihood_ratio_check(&kj_p, &pc, &qc, a, b, &x, &xt) {
                                Ok((lhs, rhs)) => {
                                    lr_dev = lr_dev.max((lhs - rhs).abs());
                                    lr_configs += 1;
                                }
                                Err(KnockoffError::Unidentifiable(_)) => {}
                                Err(e) => return Err(e),
                            }
                        }
                    }
                }
            }
        }
    }

    let checks = vec![
        CheckOutcome {
            name: "scip_exchangeability_all_subsets".into(),
            passed: exch_dev <= EXCHANGEABILITY_TOL,
            instances,
            max_deviation: exch_dev,
            tolerance: EXCHANGEABILITY_TOL,
        },
        CheckOutcome {
            name: "scip_marginal_recovers_input".into(),
            passed: marg_dev <= EXCHANGEABILITY_TOL,
            instances,
            max_deviation: marg_dev,
            tolerance: EXCHANGEABILITY_TOL,
        },
        CheckOutcome {
            name: "likelihood_ratio_identity".into(),
            passed: lr_configs > 0 && lr_dev <= LIKELIHOOD_RATIO_TOL,
            instances: lr_configs,
            max_deviation: lr_dev,
            tolerance: LIKELIHOOD_RATIO_TOL,
        },
    ];
    Ok(VerificationReport { passed: checks.iter().all(|c| c.passed), checks })
}
