//! Python bindings: matrices cross the boundary as lists of rows.

use pyo3::prelude::*;

#[pymodule]
mod knockoffs_py {
    use knockoffs::diagnostics::{self, GaussianConditionals};
    use knockoffs::filter::{self, FilterVariant};
    use knockoffs::gaussian::{GaussianModel, KnockoffMechanism, PrecisionEstimate};
    use knockoffs::simulator::{self, ScenarioConfig};
    use knockoffs::stats::{AugmentedDesign, StatisticKind, StatisticSpec, DEFAULT_LAMBDA_FRACTION};
    use knockoffs::{discrete, KnockoffError};
    use nalgebra::{DMatrix, DVector};
    use pyo3::exceptions::{PyArithmeticError, PyValueError};
    use pyo3::prelude::*;

    type Rows = Vec<Vec<f64>>;

    fn err(e: KnockoffError) -> PyErr {
        if e.is_numerical() {
            PyArithmeticError::new_err(e.to_string())
        } else {
            PyValueError::new_err(e.to_string())
        }
    }

    fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
            return Err(PyValueError::new_err(format!("row {i} has {} entries, expected {ncols}", rows[i].len())));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
    }

    fn to_rows(m: &DMatrix<f64>) -> Rows {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn variant(name: &str) -> PyResult<FilterVariant> {
        match name {
            "knockoff" => Ok(FilterVariant::Knockoff),
            "knockoff+" => Ok(FilterVariant::KnockoffPlus),
            _ => Err(PyValueError::new_err(format!("unknown variant {name:?}; use \"knockoff\" or \"knockoff+\""))),
        }
    }

    /// Gaussian knockoff sampler built from an estimated precision matrix.
    #[pyclass(frozen)]
    struct KnockoffSampler {
        mech: KnockoffMechanism,
    }

    #[pymethods]
    impl KnockoffSampler {
        /// `d` defaults to the equicorrelated choice.
        #[new]
        #[pyo3(signature = (theta_tilde, d=None))]
        fn new(theta_tilde: Rows, d: Option<Vec<f64>>) -> PyResult<Self> {
            let est = PrecisionEstimate::new(matrix(&theta_tilde)?).map_err(err)?;
            let mech = match d {
                Some(d) => KnockoffMechanism::build(est, DVector::from_vec(d)),
                None => KnockoffMechanism::equicorrelated(est),
            }
            .map_err(err)?;
            Ok(Self { mech })
        }

        fn sample(&self, x: Rows, seed: u64) -> PyResult<Rows> {
            Ok(to_rows(&self.mech.sample(&matrix(&x)?, seed).map_err(err)?))
        }

        #[getter]
        fn diag_d(&self) -> Vec<f64> {
            self.mech.diag_d().iter().copied().collect()
        }

        #[getter]
        fn is_psd(&self) -> bool {
            self.mech.theta_tilde().is_psd()
        }
    }

    /// Returns `(threshold, selected)`; the threshold is `inf` when nothing is selected.
    #[pyfunction]
    #[pyo3(signature = (w, q, variant="knockoff+"))]
    fn knockoff_threshold(w: Vec<f64>, q: f64, variant: &str) -> PyResult<(f64, Vec<usize>)> {
        let s = filter::threshold(&w, q, self::variant(variant)?).map_err(err)?;
        Ok((s.threshold, s.selected))
    }

    #[pyfunction]
    #[pyo3(signature = (x, xt, y, statistic="lcd", lambda_fraction=DEFAULT_LAMBDA_FRACTION, seed=0))]
    fn w_statistics(x: Rows, xt: Rows, y: Vec<f64>, statistic: &str, lambda_fraction: f64, seed: u64) -> PyResult<Vec<f64>> {
        let kind = match statistic {
            "marginal" => StatisticKind::MarginalCorrelationDifference,
            "lcd" => StatisticKind::LassoCoefficientDifference,
            _ => return Err(PyValueError::new_err(format!("unknown statistic {statistic:?}; use \"marginal\" or \"lcd\""))),
        };
        let design = AugmentedDesign::new(&matrix(&x)?, &matrix(&xt)?).map_err(err)?;
        let spec = StatisticSpec { kind, lambda_fraction, seed };
        Ok(spec.compute(&design, &DVector::from_vec(y)).map_err(err)?.w)
    }

    /// Per-feature observed KL of the knockoffs built from `theta_tilde`
    /// against the true precision `theta`.
    #[pyfunction]
    fn observed_kl(x: Rows, xt: Rows, theta: Rows, theta_tilde: Rows) -> PyResult<Vec<f64>> {
        let pc = GaussianConditionals::new(&matrix(&theta)?).map_err(err)?;
        let qc = GaussianConditionals::new(&matrix(&theta_tilde)?).map_err(err)?;
        Ok(diagnostics::observed_kl(&matrix(&x)?, &matrix(&xt)?, &pc, &qc).map_err(err)?.kl_hat)
    }

    #[pyfunction]
    fn delta_theta(theta: Rows, theta_tilde: Rows) -> PyResult<f64> {
        let model = GaussianModel::new(matrix(&theta)?).map_err(err)?;
        let est = PrecisionEstimate::new(matrix(&theta_tilde)?).map_err(err)?;
        diagnostics::delta_theta(&model, &est).map_err(err)
    }

    /// High-probability bound on `max_j KL_j` under a uniform log-ratio bound `delta`.
    #[pyfunction]
    fn lemma2_bound(n: usize, p: usize, delta: f64) -> f64 {
        diagnostics::lemma2_bound(n, p, delta)
    }

    /// The same bound for Gaussian knockoffs with columnwise error `delta_theta`.
    #[pyfunction]
    fn lemma4_bound(delta_theta: f64, n: usize, p: usize) -> f64 {
        diagnostics::lemma4_bound(delta_theta, n, p)
    }

    #[pyfunction]
    fn ar1_precision(p: usize, rho: f64) -> PyResult<Rows> {
        Ok(to_rows(simulator::gen_ar1_precision(p, rho).map_err(err)?.precision()))
    }

    /// Runs a scenario given as JSON and returns the report as JSON.
    #[pyfunction]
    fn simulate(py: Python<'_>, config_json: &str, seed: u64) -> PyResult<String> {
        let mut cfg: ScenarioConfig =
            serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
        cfg.seed = seed;
        cfg.validate().map_err(err)?;
        let report = py.detach(|| simulator::simulate(&cfg)).map_err(err)?;
        serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Exact-enumeration oracle suite; returns `(passed, report_json)`.
    #[pyfunction]
    #[pyo3(signature = (seed, instances=100))]
    fn verify(seed: u64, instances: usize) -> PyResult<(bool, String)> {
        let report = discrete::run_verification(seed, instances).map_err(err)?;
        let json = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((report.passed, json))
    }
}
