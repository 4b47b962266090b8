//! Monte Carlo properties of the statistics, diagnostics and simulator.

use knockoffs::diagnostics::{self, GaussianConditionals};
use knockoffs::gaussian::{KnockoffMechanism, PrecisionEstimate};
use knockoffs::mc::Estimate;
use knockoffs::rng;
use knockoffs::simulator::{self, PrecisionMode, ScenarioConfig, Scenario};
use knockoffs::stats::{AugmentedDesign, StatisticKind};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

fn base(n: usize, p: usize, k: usize, amplitude: f64, reps: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n,
        p,
        ar1_rho: 0.3,
        signal_count: k,
        signal_amplitude: amplitude,
        replicates: reps,
        seed,
        ..ScenarioConfig::reference()
    }
}

#[test]
fn null_lasso_signs_are_balanced() {
    let s = Scenario::prepare(&base(100, 10, 0, 0.0, 500, 1)).unwrap();
    let recs = simulator::run_replicates(&s).unwrap();
    for j in 0..10 {
        let nonzero = recs.iter().filter(|r| r.w[j] != 0.0).count();
        let positive = recs.iter().filter(|r| r.w[j] > 0.0).count();
        let e = Estimate::proportion(positive, nonzero);
        assert!(e.within(0.5, 3.0), "feature {j}: {positive}/{nonzero}");
    }
}

#[test]
fn strong_signal_wins_its_pair() {
    let s = Scenario::prepare(&ScenarioConfig { ar1_rho: 0.0, ..base(200, 10, 1, 10.0, 200, 2) }).unwrap();
    let recs = simulator::run_replicates(&s).unwrap();
    let wins = recs.iter().filter(|r| r.w[0] > 0.0).count();
    assert!(wins as f64 >= 0.95 * recs.len() as f64, "{wins}");
}

#[test]
fn global_null_knockoff_plus_controls_fdr() {
    let cfg = ScenarioConfig { statistic: StatisticKind::MarginalCorrelationDifference, ..base(100, 20, 0, 0.0, 1000, 3) };
    let report = simulator::simulate(&cfg).unwrap();
    assert!(report.empirical_fdr.at_most(cfg.q, 3.0), "{:?}", report.empirical_fdr);
    // under the global null every selection is entirely false
    assert!(report.per_replicate.iter().all(|r| r.selected_count == r.false_count));
    assert!(report.restricted_fdr[0].estimate.at_most(cfg.q, 3.0));
}

// Mann-Whitney z-score between two samples
fn rank_sum_z(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let rank_sum: f64 = all.iter().enumerate().filter(|(_, v)| v.1).map(|(i, _)| (i + 1) as f64).sum();
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    (u - n1 * n2 / 2.0) / (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt()
}

#[test]
fn null_importances_are_exchangeable() {
    let model = simulator::gen_ar1_precision(6, 0.5).unwrap();
    let mech = KnockoffMechanism::equicorrelated(model.as_estimate()).unwrap();
    let (mut z, mut zt) = (vec![Vec::new(); 6], vec![Vec::new(); 6]);
    for rep in 0..600 {
        let mut r = rng::stream(4, rep);
        let x = model.sample(80, &mut r).unwrap();
        let y = DVector::from_fn(80, |i, _| 2.0 * x[(i, 0)] + r.sample::<f64, _>(StandardNormal));
        let xt = mech.sample_with(&x, &mut r).unwrap();
        let d = AugmentedDesign::new(&x, &xt).unwrap();
        let imp = d.columns().tr_mul(&y);
        for j in 0..6 {
            z[j].push(imp[j].abs());
            zt[j].push(imp[j + 6].abs());
        }
    }
    for j in 2..6 {
        let zscore = rank_sum_z(&z[j], &zt[j]);
        assert!(zscore.abs() <= 3.0, "feature {j}: z = {zscore}");
    }
    // the signal is not exchangeable with its knockoff
    assert!(rank_sum_z(&z[0], &zt[0]) > 3.0);
}

#[test]
fn nodewise_error_shrinks_with_unlabeled_sample_size() {
    let model = simulator::gen_ar1_precision(10, 0.5).unwrap();
    let mean_delta = |nu: usize| {
        (0..5)
            .map(|s| {
                let xu = model.sample(nu, &mut rng::stream(5, s)).unwrap();
                let est = simulator::nodewise_estimate(&xu, 0.05).unwrap();
                diagnostics::delta_theta(&model, &est).unwrap()
            })
            .sum::<f64>()
            / 5.0
    };
    let d: Vec<f64> = [200, 1000, 5000].iter().map(|&nu| mean_delta(nu)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}

struct PerturbedSetup {
    model: knockoffs::GaussianModel,
    mech: KnockoffMechanism,
    pc: GaussianConditionals,
    qc: GaussianConditionals,
}

fn perturbed(p: usize, delta: f64, seed: u64) -> PerturbedSetup {
    let model = simulator::gen_ar1_precision(p, 0.3).unwrap();
    let est: PrecisionEstimate = simulator::perturb_precision(&model, delta, seed).unwrap();
    PerturbedSetup {
        mech: KnockoffMechanism::equicorrelated(est.clone()).unwrap(),
        pc: GaussianConditionals::from_model(&model).unwrap(),
        qc: GaussianConditionals::from_estimate(&est).unwrap(),
        model,
    }
}

#[test]
fn event_e_delta_is_frequent_at_the_explicit_delta() {
    let (n, p) = (200, 20);
    let s = perturbed(p, 0.02, 6);
    let delta = diagnostics::lemma4_delta(0.02, n, p);
    let reps = 500;
    let hits = (0..reps)
        .filter(|&rep| {
            let mut r = rng::stream(7, rep as u64);
            let x = s.model.sample(n, &mut r).unwrap();
            let xt = s.mech.sample_with(&x, &mut r).unwrap();
            let kl = diagnostics::observed_kl(&x, &xt, &s.pc, &s.qc).unwrap();
            diagnostics::event_e_delta_check(&kl.per_observation_terms, delta)
        })
        .count();
    let e = Estimate::proportion(hits, reps);
    assert!(e.mean >= 1.0 - 1.0 / p as f64 - 3.0 * e.se, "{e:?}");
}

#[test]
fn observed_kl_has_nonnegative_mean_under_p() {
    let (n, p) = (50, 8);
    let s = perturbed(p, 0.3, 8);
    let reps = 1000;
    let mut sums = vec![Vec::with_capacity(reps); p];
    for rep in 0..reps {
        let mut r = rng::stream(9, rep as u64);
        let x = s.model.sample(n, &mut r).unwrap();
        let xt = s.mech.sample_with(&x, &mut r).unwrap();
        let kl = diagnostics::observed_kl(&x, &xt, &s.pc, &s.qc).unwrap();
        for j in 0..p {
            sums[j].push(kl.kl_hat[j]);
        }
    }
    for (j, v) in sums.iter().enumerate() {
        let e = Estimate::from_values(v);
        assert!(e.mean >= -3.0 * e.se, "feature {j}: {e:?}");
    }
}

#[test]
fn null_sign_probability_follows_signed_kl() {
    // P(W_j > 0 | unordered pair) = e^k / (1 + e^k) with k = sign(W_j) KL_j
    let cfg = ScenarioConfig {
        statistic: StatisticKind::MarginalCorrelationDifference,
        precision_mode: PrecisionMode::ColumnPerturb { delta_target: 0.3 },
        ..base(60, 10, 3, 1.0, 4000, 10)
    };
    let s = Scenario::prepare(&cfg).unwrap();
    let recs = simulator::run_replicates(&s).unwrap();
    let nulls = s.truth.nulls();
    let diffs: Vec<f64> = recs
        .iter()
        .map(|r| {
            nulls
                .iter()
                .filter(|&&j| r.w[j] != 0.0)
                .map(|&j| {
                    let k = r.w[j].signum() * r.kl_hat[j];
                    let positive = if r.w[j] > 0.0 { 1.0 } else { 0.0 };
                    positive - 1.0 / (1.0 + (-k).exp())
                })
                .sum()
        })
        .collect();
    let e = Estimate::from_values(&diffs);
    assert!(e.within(0.0, 3.0), "{e:?}");

    // and the signed KL actually varies, so the check has teeth
    let spread: f64 = recs.iter().flat_map(|r| nulls.iter().map(move |&j| r.kl_hat[j].abs())).sum::<f64>()
        / (recs.len() * nulls.len()) as f64;
    assert!(spread > 0.1, "{spread}");
}
