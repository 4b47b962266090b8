//! Approximate model-X knockoffs.
//!
//! Gaussian knockoff sampling from an estimated precision matrix, flip-sign
//! statistics, the knockoff and knockoff+ filters, the observed-KL robustness
//! diagnostic with its FDR-inflation bounds, and a Monte Carlo harness.

pub mod adversary;
pub mod cli;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod mc;
pub mod rng;
pub mod simulator;
pub mod stats;

use nalgebra::{DMatrix, DVector};

/// `n x p` observations, one row per sample.
pub type FeatureMatrix = DMatrix<f64>;
/// Length-`n` response.
pub type ResponseVector = DVector<f64>;

pub use diagnostics::{observed_kl, BoundReport, ConditionalLogDensity, GaussianConditionals, KlDiagnostics};
pub use error::{KnockoffError, Result};
pub use filter::{knockoff_plus_threshold, knockoff_threshold, FilterVariant, SelectionResult};
pub use gaussian::{GaussianModel, KnockoffMechanism, PrecisionEstimate};
pub use simulator::{MonteCarloReport, ScenarioConfig};
pub use stats::{AugmentedDesign, StatisticKind, WStatistics};
