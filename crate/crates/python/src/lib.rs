//! Python bindings: schedules, priors, measurement models, the policy,
//! the acquisition loop, metrics and config-driven experiments.

use std::path::PathBuf;

use ads_core::agent::{self, AgentConfig};
use ads_core::config::ExperimentConfig;
use ads_core::eval;
use ads_core::experiment;
use ads_core::guidance::GuidanceMode;
use ads_core::measurement::{self, ActionKind, ActionSet, DataDomain, ForwardKind};
use ads_core::policy::{self, ExponentSign, MeasurementParticles, PolicyConfig};
use ads_core::prior;
use ads_core::rng;
use ads_core::schedule::{self, ScheduleKind};
use ads_core::AdsError;
use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: AdsError) -> PyErr {
    match e {
        AdsError::Io(io) => PyOSError::new_err(io.to_string()),
        AdsError::NonFinite { .. } | AdsError::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{value}`")))
}

fn rows_to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Discrete variance-preserving noise schedule.
#[pyclass(name = "NoiseSchedule", module = "ads_py")]
struct PySchedule {
    inner: schedule::NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps, beta_min=1e-4, beta_max=0.02, kind="linear"))]
    fn new(steps: usize, beta_min: f64, beta_max: f64, kind: &str) -> PyResult<Self> {
        let kind: ScheduleKind = parse("schedule kind", kind)?;
        schedule::NoiseSchedule::build(kind, steps, beta_min, beta_max)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn beta(&self, tau: usize) -> PyResult<f64> {
        self.inner.step(tau).map_err(to_py)?;
        Ok(self.inner.beta(tau))
    }

    fn alpha_bar(&self, tau: usize) -> PyResult<f64> {
        if tau > self.inner.steps() {
            return Err(PyValueError::new_err("tau outside [0, T]"));
        }
        Ok(self.inner.alpha_bar(tau))
    }

    fn posterior_sigma(&self, tau: usize) -> PyResult<f64> {
        self.inner.step(tau).map_err(to_py)?;
        Ok(self.inner.posterior_sigma(tau))
    }

    fn forward_noise(&self, x0: Vec<f64>, tau: usize, noise: Vec<f64>) -> PyResult<Vec<f64>> {
        schedule::forward_noise(&x0, tau, &self.inner, &noise).map_err(to_py)
    }
}

/// Gaussian mixture with isotropic components.
#[pyclass(name = "IsotropicGmm", module = "ads_py")]
struct PyGmm {
    inner: prior::IsotropicGmm,
}

#[pymethods]
impl PyGmm {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> PyResult<Self> {
        prior::IsotropicGmm::new(weights, rows_to_array(&means)?, variances)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        prior::IsotropicGmm::load_json(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.components()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn variances(&self) -> Vec<f64> {
        self.inner.variances().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means().outer_iter().map(|r| r.to_vec()).collect()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean()
    }

    /// `n` draws as `(components, samples)`.
    fn sample(&self, n: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut r = rng::stream(&[seed]);
        (0..n).map(|_| self.inner.sample(&mut r)).unzip()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(self.inner.log_density(&x))
    }

    fn score(&self, x: Vec<f64>, tau: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        let view = prior::noised_view(&self.inner, tau, &schedule.inner).map_err(to_py)?;
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(prior::score(&view, &x))
    }

    fn tweedie_denoise(&self, x: Vec<f64>, tau: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        prior::tweedie_denoise(&self.inner, &x, tau, &schedule.inner).map_err(to_py)
    }

    fn tweedie_jacobian_apply(&self, x: Vec<f64>, v: Vec<f64>, tau: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        prior::tweedie_jacobian_apply(&self.inner, &x, tau, &schedule.inner, &v).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("IsotropicGmm(components={}, dim={})", self.inner.components(), self.inner.dim())
    }
}

/// Fit an isotropic mixture by EM; returns the prior and the log-likelihood trace.
#[pyfunction]
#[pyo3(signature = (data, components, max_iters=200, tol=1e-8, seed=0))]
fn fit_gmm_em(data: Vec<Vec<f64>>, components: usize, max_iters: usize, tol: f64, seed: u64) -> PyResult<(PyGmm, Vec<f64>)> {
    let arr = rows_to_array(&data)?;
    let fit = prior::fit_gmm_em(arr.view(), components, max_iters, tol, seed).map_err(to_py)?;
    Ok((PyGmm { inner: fit.gmm }, fit.log_likelihoods))
}

/// Forward operator, noise and action groups on an image grid.
#[pyclass(name = "MeasurementModel", module = "ads_py")]
struct PyModel {
    inner: measurement::MeasurementModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (height, width, action="pixel", forward="identity", domain="real", noise_std=0.0, box_size=None))]
    fn new(
        height: usize,
        width: usize,
        action: &str,
        forward: &str,
        domain: &str,
        noise_std: f64,
        box_size: Option<(usize, usize)>,
    ) -> PyResult<Self> {
        let kind = match (action, box_size) {
            ("box", Some((h, w))) => ActionKind::Box { width: w, height: h },
            ("box", None) => return Err(PyValueError::new_err("box actions need box_size=(h, w)")),
            ("pixel", _) => ActionKind::Pixel,
            ("row-line", _) => ActionKind::RowLine,
            ("column-line", _) => ActionKind::ColumnLine,
            ("fourier-line", _) => ActionKind::FourierLine,
            (other, _) => return Err(PyValueError::new_err(format!("unknown action kind `{other}`"))),
        };
        let forward: ForwardKind = parse("forward kind", forward)?;
        let domain: DataDomain = parse("domain", domain)?;
        let space = measurement::build_action_space(kind, height, width).map_err(to_py)?;
        measurement::MeasurementModel::new(forward, domain, noise_std, space)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.space().len()
    }

    #[getter]
    fn data_dim(&self) -> usize {
        self.inner.data_dim()
    }

    #[getter]
    fn measurement_dim(&self) -> usize {
        self.inner.measurement_dim()
    }

    fn action_components(&self, action: usize) -> PyResult<Vec<usize>> {
        if action >= self.inner.space().len() {
            return Err(PyValueError::new_err("action out of range"));
        }
        Ok(self.inner.action_components(action))
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply_forward(&x).map_err(to_py)
    }

    fn adjoint(&self, r: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply_adjoint(&r).map_err(to_py)
    }

    /// Noisy measurement of `actions`; returns `(indices, values)`.
    fn acquire(&self, x_true: Vec<f64>, actions: Vec<usize>, seed: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let set = ActionSet::with_actions(self.inner.space(), &actions).map_err(to_py)?;
        let mut r = rng::stream(&[seed]);
        let y = measurement::acquire(&self.inner, &x_true, &set, &mut r).map_err(to_py)?;
        Ok((y.indices, y.values))
    }
}

fn policy_config(sigma_y: f64, sign: &str) -> PyResult<PolicyConfig> {
    let sign: ExponentSign = parse("exponent sign", sign)?;
    PolicyConfig::new(sigma_y, sign).map_err(to_py)
}

/// Per-action entropy scores from particle measurements.
#[pyfunction]
#[pyo3(signature = (particles, components, sigma_y=1.0, exponent_sign="positive"))]
fn action_scores(particles: Vec<Vec<f64>>, components: Vec<Vec<usize>>, sigma_y: f64, exponent_sign: &str) -> PyResult<Vec<f64>> {
    let p = MeasurementParticles::new(particles).map_err(to_py)?;
    policy::action_scores(&p, &components, &policy_config(sigma_y, exponent_sign)?).map_err(to_py)
}

/// Pairwise-distance entropy estimate over `restrict` (all coordinates if None).
#[pyfunction]
#[pyo3(signature = (particles, restrict=None, sigma_y=1.0, exponent_sign="positive"))]
fn entropy_estimate(particles: Vec<Vec<f64>>, restrict: Option<Vec<usize>>, sigma_y: f64, exponent_sign: &str) -> PyResult<f64> {
    let p = MeasurementParticles::new(particles).map_err(to_py)?;
    policy::entropy_estimate(&p, restrict.as_deref(), &policy_config(sigma_y, exponent_sign)?).map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
fn agent_config(
    steps: usize,
    particles: usize,
    acquisition_steps: Vec<usize>,
    zeta: f64,
    sigma_y: f64,
    initial_actions: Vec<usize>,
    seed: u64,
    beta_min: f64,
    beta_max: f64,
    guidance: &str,
) -> PyResult<AgentConfig> {
    Ok(AgentConfig {
        steps,
        schedule_kind: ScheduleKind::Linear,
        beta_min,
        beta_max,
        particles,
        acquisition_steps,
        zeta,
        guidance_mode: parse::<GuidanceMode>("guidance mode", guidance)?,
        sigma_y,
        exponent_sign: ExponentSign::Positive,
        initial_actions,
        seed,
    })
}

fn trace_dict<'py>(py: Python<'py>, t: &agent::AcquisitionTrace) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("posterior_samples", t.posterior_samples.clone())?;
    d.set_item("posterior_mean", t.posterior_mean())?;
    d.set_item("actions", t.actions.actions().to_vec())?;
    d.set_item("site_mask", t.site_mask.clone())?;
    d.set_item("chosen", t.records.iter().map(|r| r.action).collect::<Vec<_>>())?;
    d.set_item("taus", t.records.iter().map(|r| r.tau).collect::<Vec<_>>())?;
    d.set_item("scores", t.records.iter().map(|r| r.scores.clone()).collect::<Vec<_>>())?;
    d.set_item("policy_calls", t.policy_calls)?;
    Ok(d)
}

/// Active subsampling of `x_true`; returns a dict describing the trace.
#[pyfunction]
#[pyo3(signature = (prior, model, x_true, steps, particles, acquisition_steps, zeta, sigma_y, initial_actions=vec![], seed=0, beta_min=1e-4, beta_max=0.02, guidance="exact-jacobian"))]
#[allow(clippy::too_many_arguments)]
fn run_ads<'py>(
    py: Python<'py>,
    prior: &PyGmm,
    model: &PyModel,
    x_true: Vec<f64>,
    steps: usize,
    particles: usize,
    acquisition_steps: Vec<usize>,
    zeta: f64,
    sigma_y: f64,
    initial_actions: Vec<usize>,
    seed: u64,
    beta_min: f64,
    beta_max: f64,
    guidance: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = agent_config(steps, particles, acquisition_steps, zeta, sigma_y, initial_actions, seed, beta_min, beta_max, guidance)?;
    let trace = agent::run_ads(&cfg, &prior.inner, &model.inner, &x_true).map_err(to_py)?;
    trace_dict(py, &trace)
}

/// Guided reconstruction from a fixed set of actions.
#[pyfunction]
#[pyo3(signature = (prior, model, x_true, actions, steps, particles, zeta, seed=0, beta_min=1e-4, beta_max=0.02, guidance="exact-jacobian"))]
#[allow(clippy::too_many_arguments)]
fn run_fixed_mask<'py>(
    py: Python<'py>,
    prior: &PyGmm,
    model: &PyModel,
    x_true: Vec<f64>,
    actions: Vec<usize>,
    steps: usize,
    particles: usize,
    zeta: f64,
    seed: u64,
    beta_min: f64,
    beta_max: f64,
    guidance: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = agent_config(steps, particles, vec![], zeta, 1.0, vec![], seed, beta_min, beta_max, guidance)?;
    let mask = ActionSet::with_actions(model.inner.space(), &actions).map_err(to_py)?;
    let trace = agent::run_fixed_mask(&cfg, &prior.inner, &model.inner, &x_true, &mask).map_err(to_py)?;
    trace_dict(py, &trace)
}

#[pyfunction]
fn mae(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    eval::mae(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=1.0))]
fn psnr(a: Vec<f64>, b: Vec<f64>, peak: f64) -> PyResult<f64> {
    eval::psnr(&a, &b, peak).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, height, width, dynamic_range=1.0))]
fn ssim(a: Vec<f64>, b: Vec<f64>, height: usize, width: usize, dynamic_range: f64) -> PyResult<f64> {
    eval::ssim(&a, &b, height, width, dynamic_range).map_err(to_py)
}

/// Per-action inclusion frequencies and mean Bernoulli entropy in bits.
#[pyfunction]
fn mask_distribution_entropy(masks: Vec<Vec<u8>>) -> PyResult<(Vec<f64>, f64)> {
    eval::mask_distribution_entropy(&masks).map_err(to_py)
}

/// Run a TOML experiment; returns the summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None, workers=None))]
fn run_experiment(py: Python<'_>, config_path: PathBuf, out_dir: Option<PathBuf>, seed: Option<u64>, workers: Option<usize>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::load(&config_path).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let out = out_dir.or_else(|| cfg.out_dir.clone());
    let run = py
        .detach(|| experiment::run_experiment(&cfg, out.as_deref()))
        .map_err(to_py)?;
    serde_json::to_string(&run.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
pub fn ads_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyGmm>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_gmm_em, m)?)?;
    m.add_function(wrap_pyfunction!(action_scores, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_ads, m)?)?;
    m.add_function(wrap_pyfunction!(run_fixed_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mask_distribution_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
