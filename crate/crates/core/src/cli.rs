//! Command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure
//! (including a failed verification suite).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adversary::{self, AdversaryConfig, AdversaryScenario};
use crate::diagnostics::{self, GaussianConditionals};
use crate::discrete;
use crate::error::Result;
use crate::filter::{self, FilterVariant};
use crate::gaussian::{GaussianModel, KnockoffMechanism, PrecisionEstimate};
use crate::io::{self, ReportEnvelope};
use crate::simulator::{self, ScenarioConfig};
use crate::stats::{AugmentedDesign, StatisticKind, StatisticSpec, DEFAULT_LAMBDA_FRACTION};

#[derive(Debug, Parser)]
#[command(name = "knockoffs", version = env!("CARGO_PKG_VERSION"), about = "Approximate model-X knockoffs and FDR diagnostics")]
pub struct Cli {
    /// Worker threads for Monte Carlo commands.
    #[arg(long, global = true, env = "KNOCKOFF_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample Gaussian knockoffs for a feature matrix.
    Sample(SampleArgs),
    /// Compute W statistics and run the knockoff filter.
    Filter(FilterArgs),
    /// Run a Monte Carlo scenario.
    Simulate(SimulateArgs),
    /// Observed-KL diagnostic and bounds for one data set against a reference model.
    Diagnose(DiagnoseArgs),
    /// Level of the randomized single-feature test under both laws.
    Adversary(AdversaryArgs),
    /// Exact-enumeration checks on small discrete instances.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum VariantArg {
    #[value(name = "knockoff")]
    Knockoff,
    #[value(name = "knockoff+")]
    KnockoffPlus,
}

impl From<VariantArg> for FilterVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Knockoff => FilterVariant::Knockoff,
            VariantArg::KnockoffPlus => FilterVariant::KnockoffPlus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum StatisticArg {
    Marginal,
    Lcd,
}

impl From<StatisticArg> for StatisticKind {
    fn from(s: StatisticArg) -> Self {
        match s {
            StatisticArg::Marginal => StatisticKind::MarginalCorrelationDifference,
            StatisticArg::Lcd => StatisticKind::LassoCoefficientDifference,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// Feature matrix CSV (centered).
    #[arg(long)]
    pub x: PathBuf,
    /// Estimated precision matrix CSV.
    #[arg(long)]
    pub theta_tilde: PathBuf,
    /// Optional single-column CSV with the diagonal of D; equicorrelated otherwise.
    #[arg(long)]
    pub d: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub xt: PathBuf,
    /// Single-column response CSV.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub q: f64,
    #[arg(long, value_enum, default_value = "knockoff+")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "lcd")]
    pub statistic: StatisticArg,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_FRACTION)]
    pub lambda_fraction: f64,
    /// Fixes the lasso coordinate order.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides any seed in the config.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    pub statistic: Option<StatisticArg>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub xt: PathBuf,
    /// True (reference) precision matrix CSV.
    #[arg(long)]
    pub theta: PathBuf,
    /// Precision matrix the knockoffs were built from.
    #[arg(long)]
    pub theta_tilde: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AdversaryArgs {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

fn emit(out: &Option<PathBuf>, report: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => io::write_report_json(path, report),
        None => {
            println!("{}", io::report_to_string(report)?);
            Ok(())
        }
    }
}

fn sample(args: &SampleArgs) -> Result<i32> {
    let x = io::read_matrix_csv(&args.x)?;
    let est = PrecisionEstimate::new(io::read_matrix_csv(&args.theta_tilde)?)?;
    let mech = match &args.d {
        Some(path) => KnockoffMechanism::build(est, io::read_vector_csv(path)?)?,
        None => KnockoffMechanism::equicorrelated(est)?,
    };
    let xt = mech.sample(&x, args.seed)?;
    io::write_matrix_csv(&args.out, &xt, None)?;
    Ok(0)
}

#[derive(Serialize)]
struct FilterOutput {
    statistics: crate::stats::WStatistics,
    selection: filter::SelectionResult,
}

fn run_filter(args: &FilterArgs) -> Result<i32> {
    let x = io::read_matrix_csv(&args.x)?;
    let xt = io::read_matrix_csv(&args.xt)?;
    let y = io::read_vector_csv(&args.y)?;
    let design = AugmentedDesign::new(&x, &xt)?;
    let spec = StatisticSpec { kind: args.statistic.into(), lambda_fraction: args.lambda_fraction, seed: args.seed };
    let statistics = spec.compute(&design, &y)?;
    let selection = filter::threshold(&statistics.w, args.q, args.variant.into())?;
    let out = ReportEnvelope::new("filter", Some(args.seed), args, FilterOutput { statistics, selection })?;
    emit(&args.out, &out)?;
    Ok(0)
}

fn simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<i32> {
    let mut cfg: ScenarioConfig = io::read_json(&args.config)?;
    cfg.seed = args.seed;
    if let Some(q) = args.q {
        cfg.q = q;
    }
    if let Some(v) = args.variant {
        cfg.variant = v.into();
    }
    if let Some(s) = args.statistic {
        cfg.statistic = s.into();
    }
    cfg.validate()?;
    let report = simulator::with_threads(threads, || simulator::simulate(&cfg))??;
    emit(&args.out, &ReportEnvelope::new("simulate", Some(cfg.seed), &cfg, report)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct DiagnoseOutput {
    diagnostics: diagnostics::KlDiagnostics,
    bound_report: diagnostics::BoundReport,
    /// Per-term bound used for the `E_delta` event check.
    event_delta: f64,
    event_e_delta_holds: bool,
    note: &'static str,
}

fn diagnose(args: &DiagnoseArgs) -> Result<i32> {
    let x = io::read_matrix_csv(&args.x)?;
    let xt = io::read_matrix_csv(&args.xt)?;
    let model = GaussianModel::new(io::read_matrix_csv(&args.theta)?)?;
    let est = PrecisionEstimate::new(io::read_matrix_csv(&args.theta_tilde)?)?;
    let p_conds = GaussianConditionals::from_model(&model)?;
    let q_conds = GaussianConditionals::from_estimate(&est)?;
    let kl = diagnostics::observed_kl(&x, &xt, &p_conds, &q_conds)?;
    let (n, p) = x.shape();
    let grid = diagnostics::default_epsilon_grid();
    let exceed: Vec<f64> = grid.iter().map(|&e| if kl.max_kl > e { 1.0 } else { 0.0 }).collect();
    let mut bound_report = diagnostics::inflation_bound(args.q, &grid, &exceed, None)?;
    let dt = diagnostics::delta_theta(&model, &est)?;
    bound_report.delta_theta = Some(dt);
    bound_report.lemma4_bound = Some(diagnostics::lemma4_bound(dt, n, p));
    let event_delta = diagnostics::lemma4_delta(dt, n, p);
    let out = DiagnoseOutput {
        event_e_delta_holds: diagnostics::event_e_delta_check(&kl.per_observation_terms, event_delta),
        diagnostics: kl,
        bound_report,
        event_delta,
        note: "exceedance is the single-data-set indicator max_j KL_j > eps over all features",
    };
    emit(&args.out, &ReportEnvelope::new("diagnose", None, args, out)?)?;
    Ok(0)
}

fn run_adversary(args: &AdversaryArgs, threads: Option<usize>) -> Result<i32> {
    let mut cfg: AdversaryConfig = match &args.config {
        Some(path) => io::read_json(path)?,
        None => AdversaryConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(q) = args.q {
        cfg.q = q;
    }
    let scenario = AdversaryScenario::new(cfg.clone())?;
    let report = simulator::with_threads(threads, || adversary::monte_carlo_levels(&scenario, cfg.replicates, cfg.seed))??;
    emit(&args.out, &ReportEnvelope::new("adversary", Some(cfg.seed), &cfg, report)?)?;
    Ok(0)
}

fn verify(args: &VerifyArgs) -> Result<i32> {
    let report = discrete::run_verification(args.seed, args.instances)?;
    let passed = report.passed;
    emit(&args.out, &ReportEnvelope::new("verify", Some(args.seed), args, report)?)?;
    Ok(if passed { 0 } else { 2 })
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Sample(a) => sample(a),
        Command::Filter(a) => run_filter(a),
        Command::Simulate(a) => simulate(a, cli.threads),
        Command::Diagnose(a) => diagnose(a),
        Command::Adversary(a) => run_adversary(a, cli.threads),
        Command::Verify(a) => verify(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() { 2 } else { 1 }
        }
    }
}
