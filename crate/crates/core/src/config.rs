//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! kind = "planted"          # planted | gmm | idx | csv | bin
//! train = 1000
//! test = 100
//!
//! [prior]
//! components = 8
//!
//! [measurement]
//! action = { type = "pixel" }
//! noise_std = 0.01
//!
//! [agent]
//! steps = 200
//! particles = 16
//! window = [60, 160]
//!
//! [eval]
//! policies = ["ads", "data-variance", "random"]
//! sampling_rates = [0.1, 0.25]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{evenly_partition, AgentConfig};
use crate::data::PlantedConfig;
use crate::error::{AdsError, Result};
use crate::guidance::GuidanceMode;
use crate::measurement::{ActionKind, DataDomain, ForwardKind};
use crate::policy::ExponentSign;
use crate::schedule::ScheduleKind;

fn config_err(key: &str, message: impl Into<String>) -> AdsError {
    AdsError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Planted,
    Gmm,
    Idx,
    Csv,
    Bin,
}

/// Ground truth for the `gmm` dataset kind: random component means on a
/// `height × width` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSource {
    pub height: usize,
    pub width: usize,
    pub components: usize,
    pub std: f64,
}

impl Default for GmmSource {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            components: 1,
            std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub pad: Option<usize>,
    #[serde(default)]
    pub downsample: Option<usize>,
    #[serde(default)]
    pub planted: PlantedConfig,
    #[serde(default)]
    pub gmm: GmmSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_em_iters")]
    pub max_iters: usize,
    #[serde(default = "default_em_tol")]
    pub tol: f64,
    /// Load this prior instead of fitting one.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_components() -> usize {
    1
}
fn default_em_iters() -> usize {
    200
}
fn default_em_tol() -> f64 {
    1e-8
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            components: default_components(),
            max_iters: default_em_iters(),
            tol: default_em_tol(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    #[serde(default)]
    pub forward: ForwardKind,
    #[serde(default)]
    pub domain: DataDomain,
    #[serde(default = "default_action")]
    pub action: ActionKind,
    #[serde(default)]
    pub noise_std: f64,
}

fn default_action() -> ActionKind {
    ActionKind::Pixel
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        Self {
            forward: ForwardKind::Identity,
            domain: DataDomain::Real,
            action: ActionKind::Pixel,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub steps: usize,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    pub particles: usize,
    /// Inclusive range of reverse iterations over which acquisitions are
    /// spread evenly.
    pub window: [usize; 2],
    #[serde(default)]
    pub initial_actions: Vec<usize>,
    pub zeta: f64,
    pub sigma_y: f64,
    #[serde(default)]
    pub exponent_sign: ExponentSign,
    #[serde(default)]
    pub guidance_mode: GuidanceMode,
}

fn default_beta_min() -> f64 {
    1e-4
}
fn default_beta_max() -> f64 {
    0.02
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Ads,
    DataVariance,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ads => "ads",
            PolicyKind::DataVariance => "data-variance",
            PolicyKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    /// Fractions of the action space to acquire.
    #[serde(default)]
    pub sampling_rates: Vec<f64>,
    /// Absolute action budgets, used in addition to `sampling_rates`.
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default = "default_peak")]
    pub peak: f64,
    /// Test samples to evaluate; defaults to the whole test split.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Samples whose full traces are written under `traces/`.
    #[serde(default = "default_trace_samples")]
    pub trace_samples: usize,
}

fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Ads, PolicyKind::DataVariance, PolicyKind::Random]
}
fn default_peak() -> f64 {
    1.0
}
fn default_trace_samples() -> usize {
    4
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            policies: default_policies(),
            sampling_rates: Vec::new(),
            budgets: Vec::new(),
            peak: default_peak(),
            samples: None,
            trace_samples: default_trace_samples(),
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub measurement: MeasurementSpec,
    pub agent: AgentSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e.span().map_or_else(|| "<root>".to_string(), |s| locate_key(text, s.start));
            config_err(&key, e.message().to_string())
        })?;
        Ok(cfg)
    }

    /// Parse and validate a config file. Relative dataset and prior paths
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.dataset.path, &mut cfg.dataset.labels_path, &mut cfg.prior.path]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Image height, width and channels after padding and pooling.
    pub fn image_shape(&self) -> Result<(usize, usize, usize)> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Planted => Ok((d.planted.size, d.planted.size, 1)),
            DatasetKind::Gmm => Ok((d.gmm.height, d.gmm.width, 1)),
            _ => Err(config_err("dataset.kind", "shape is only known after loading")),
        }
    }

    /// Check every field that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.train < 2 {
            return Err(config_err("dataset.train", "need at least two training samples"));
        }
        if d.test == 0 {
            return Err(config_err("dataset.test", "need at least one test sample"));
        }
        match d.kind {
            DatasetKind::Idx | DatasetKind::Csv | DatasetKind::Bin if d.path.is_none() => {
                return Err(config_err("dataset.path", "required for file datasets"));
            }
            DatasetKind::Planted => d
                .planted
                .validate()
                .map_err(|e| config_err("dataset.planted", e.to_string()))?,
            DatasetKind::Gmm => {
                let g = &d.gmm;
                if g.height == 0 || g.width == 0 || g.components == 0 || !(g.std > 0.0) {
                    return Err(config_err("dataset.gmm", "needs positive sizes and std"));
                }
            }
            _ => {}
        }
        if d.downsample == Some(0) {
            return Err(config_err("dataset.downsample", "factor must be positive"));
        }
        if self.prior.path.is_none() && self.prior.components == 0 {
            return Err(config_err("prior.components", "must be positive"));
        }
        if !(self.measurement.noise_std >= 0.0) {
            return Err(config_err("measurement.noise_std", "must be non-negative"));
        }
        let a = &self.agent;
        if a.steps == 0 {
            return Err(config_err("agent.steps", "must be positive"));
        }
        if a.particles < 2 {
            return Err(config_err("agent.particles", "need at least two particles"));
        }
        if a.window[0] > a.window[1] || a.window[1] >= a.steps {
            return Err(config_err("agent.window", format!("must satisfy a <= b < steps = {}", a.steps)));
        }
        if !(a.zeta >= 0.0) {
            return Err(config_err("agent.zeta", "must be non-negative"));
        }
        if !(a.sigma_y > 0.0) {
            return Err(config_err("agent.sigma_y", "must be positive"));
        }
        if a.guidance_mode == GuidanceMode::FiniteDifferenceOracle {
            return Err(config_err("agent.guidance_mode", "finite-difference mode is a test oracle"));
        }
        let e = &self.eval;
        if e.policies.is_empty() {
            return Err(config_err("eval.policies", "list at least one policy"));
        }
        if e.sampling_rates.is_empty() && e.budgets.is_empty() {
            return Err(config_err("eval.sampling_rates", "give sampling_rates or budgets"));
        }
        if let Some(r) = e.sampling_rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(config_err("eval.sampling_rates", format!("{r} outside (0, 1]")));
        }
        if e.budgets.contains(&0) {
            return Err(config_err("eval.budgets", "budgets must be positive"));
        }
        if !(e.peak > 0.0) {
            return Err(config_err("eval.peak", "must be positive"));
        }
        if e.samples == Some(0) {
            return Err(config_err("eval.samples", "must be positive"));
        }
        if self.workers == Some(0) {
            return Err(config_err("workers", "must be positive"));
        }
        Ok(())
    }

    /// Action budgets in increasing order for an action space of `actions`.
    pub fn budgets(&self, actions: usize) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = self
            .eval
            .sampling_rates
            .iter()
            .map(|r| ((r * actions as f64).round() as usize).max(1))
            .chain(self.eval.budgets.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        let init = self.agent.initial_actions.len();
        if let Some(b) = out.iter().find(|b| **b > actions || **b < init.max(1)) {
            return Err(config_err(
                "eval.budgets",
                format!("budget {b} outside [{}, {actions}]", init.max(1)),
            ));
        }
        let span = self.agent.window[1] - self.agent.window[0] + 1;
        if let Some(b) = out.iter().find(|b| **b - init > span) {
            return Err(config_err(
                "agent.window",
                format!("budget {b} needs {} acquisition steps, window has {span}", b - init),
            ));
        }
        if let Some(a) = self.agent.initial_actions.iter().find(|a| **a >= actions) {
            return Err(config_err("agent.initial_actions", format!("action {a} outside space of {actions}")));
        }
        Ok(out)
    }

    /// Agent configuration acquiring `budget` actions in total.
    pub fn agent_config(&self, budget: usize, seed: u64) -> Result<AgentConfig> {
        let a = &self.agent;
        let count = budget.saturating_sub(a.initial_actions.len());
        Ok(AgentConfig {
            steps: a.steps,
            schedule_kind: a.schedule,
            beta_min: a.beta_min,
            beta_max: a.beta_max,
            particles: a.particles,
            acquisition_steps: evenly_partition(a.window[0], a.window[1], count)?,
            zeta: a.zeta,
            guidance_mode: a.guidance_mode,
            sigma_y: a.sigma_y,
            exponent_sign: a.exponent_sign,
            initial_actions: a.initial_actions.clone(),
            seed,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

/// Dotted key path of the table entry enclosing byte `offset`.
fn locate_key(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') && !t.starts_with("[[") {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            if !t.starts_with('#') {
                key = k.trim().to_string();
            }
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<root>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
