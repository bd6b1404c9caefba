//! The acquisition loop: a particle batch runs the guided reverse diffusion
//! and, at scheduled steps, the agent measures the action with maximum
//! estimated entropy.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, AdsError, Result};
use crate::guidance::{data_fidelity_step, guided_gradient_local, reverse_coefficients, GuidanceConfig, GuidanceMode};
use crate::measurement::{write_mask_csv, write_mask_pgm, ActionSet, MeasurementModel, SparseMeasurement};
use crate::policy::{action_scores, remaining_components, select_max_entropy, ExponentSign, MeasurementParticles, PolicyConfig};
use crate::prior::{noised_view, IsotropicGmm};
use crate::rng::{self, TAG_INIT, TAG_MEASURE, TAG_STEP};
use crate::schedule::{NoiseSchedule, ScheduleKind};

const NONFINITE_CHECK_EVERY: usize = 50;

/// Per-particle output of one reverse step: next state, Tweedie estimate, predicted measurement.
type StepOutput = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Parameters of one active-subsampling run.
///
/// `acquisition_steps` counts reverse iterations from the start of the
/// chain: iteration `k` runs diffusion step `τ = T − k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub steps: usize,
    #[serde(default)]
    pub schedule_kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub particles: usize,
    pub acquisition_steps: Vec<usize>,
    pub zeta: f64,
    #[serde(default)]
    pub guidance_mode: GuidanceMode,
    pub sigma_y: f64,
    #[serde(default)]
    pub exponent_sign: ExponentSign,
    #[serde(default)]
    pub initial_actions: Vec<usize>,
    pub seed: u64,
}

impl AgentConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.schedule_kind, self.steps, self.beta_min, self.beta_max)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            zeta: self.zeta,
            mode: self.guidance_mode,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            sigma_y: self.sigma_y,
            exponent_sign: self.exponent_sign,
        }
    }

    /// Total number of actions a run acquires.
    pub fn budget(&self) -> usize {
        self.initial_actions.len() + self.acquisition_steps.len()
    }

    pub fn validate(&self, space_len: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(param("steps must be >= 1"));
        }
        if self.particles == 0 {
            return Err(param("particle count must be >= 1"));
        }
        if !self.acquisition_steps.is_empty() && self.particles < 2 {
            return Err(param("entropy scoring needs at least two particles"));
        }
        self.guidance().validate()?;
        self.policy().validate()?;
        if self.guidance_mode == GuidanceMode::FiniteDifferenceOracle {
            return Err(param("finite-difference guidance is a test oracle, not a run mode"));
        }
        let unique: BTreeSet<usize> = self.acquisition_steps.iter().copied().collect();
        if unique.len() != self.acquisition_steps.len() {
            return Err(param("acquisition steps must be distinct"));
        }
        if let Some(bad) = unique.iter().find(|k| **k >= self.steps) {
            return Err(param(format!("acquisition step {bad} outside [0, {})", self.steps)));
        }
        let init: BTreeSet<usize> = self.initial_actions.iter().copied().collect();
        if init.len() != self.initial_actions.len() {
            return Err(param("initial actions must be distinct"));
        }
        if let Some(bad) = init.iter().find(|a| **a >= space_len) {
            return Err(param(format!("initial action {bad} outside space of {space_len}")));
        }
        if self.budget() > space_len {
            return Err(param(format!(
                "budget {} exceeds the {space_len} available actions",
                self.budget()
            )));
        }
        Ok(())
    }
}

/// `count` distinct reverse iterations spread evenly over `[start, end]`.
pub fn evenly_partition(start: usize, end: usize, count: usize) -> Result<Vec<usize>> {
    if end < start {
        return Err(param(format!("empty window [{start}, {end}]")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let span = end - start + 1;
    if count > span {
        return Err(param(format!("cannot place {count} acquisitions in [{start}, {end}]")));
    }
    Ok((0..count).map(|i| start + i * span / count).collect())
}

/// The particle states tracked through the reverse process.
#[derive(Debug, Clone)]
pub struct ParticleBatch {
    pub states: Vec<Vec<f64>>,
    pub tau: usize,
    pub x0_hats: Vec<Vec<f64>>,
    pub y_hats: Vec<Vec<f64>>,
}

impl ParticleBatch {
    /// Standard normal initial states at `τ = T`.
    pub fn initialize(seed: u64, particles: usize, dim: usize, steps: usize) -> Self {
        let states = (0..particles)
            .map(|i| rng::standard_normal_vec(&mut rng::stream(&[seed, TAG_INIT, i as u64]), dim))
            .collect();
        Self {
            states,
            tau: steps,
            x0_hats: Vec::new(),
            y_hats: Vec::new(),
        }
    }

    fn first_nonfinite(&self) -> Option<usize> {
        self.states
            .iter()
            .position(|s| s.iter().any(|v| !v.is_finite()))
    }

    pub fn mean_state(&self) -> Vec<f64> {
        mean_rows(&self.states)
    }
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    /// Reverse iteration at which the action was chosen.
    pub iteration: usize,
    pub tau: usize,
    pub action: usize,
    /// Candidate actions and their scores, aligned.
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub measurement: SparseMeasurement,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub diffusion_s: f64,
    pub policy_s: f64,
    pub acquisition_s: f64,
    pub total_s: f64,
}

/// Output of a run: acquisitions in order, the posterior samples and the
/// final mask. Equality ignores timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquisitionTrace {
    pub records: Vec<AcquisitionRecord>,
    pub initial_actions: Vec<usize>,
    pub actions: ActionSet,
    pub measurements: SparseMeasurement,
    pub posterior_samples: Vec<Vec<f64>>,
    pub site_mask: Vec<u8>,
    pub policy_calls: usize,
    #[serde(skip)]
    pub timings: PhaseTimings,
}

impl PartialEq for AcquisitionTrace {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.initial_actions == other.initial_actions
            && self.actions == other.actions
            && self.measurements == other.measurements
            && self.posterior_samples == other.posterior_samples
            && self.site_mask == other.site_mask
            && self.policy_calls == other.policy_calls
    }
}

impl AcquisitionTrace {
    pub fn posterior_mean(&self) -> Vec<f64> {
        mean_rows(&self.posterior_samples)
    }

    /// Write mask (CSV and PGM), posterior samples, scores and timings to `dir`.
    pub fn write_dir(&self, dir: &Path, height: usize, width: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_mask_csv(&dir.join("mask.csv"), &self.site_mask, height, width)?;
        write_mask_pgm(&dir.join("mask.pgm"), &self.site_mask, height, width)?;
        let n = self.posterior_samples.len();
        let d = self.posterior_samples.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = self.posterior_samples.iter().flatten().copied().collect();
        crate::data::write_tensor(&dir.join("posterior_samples.bin"), &[n, d], &flat)?;
        let mut csv = String::from("acquisition,iteration,tau,candidate,score,chosen\n");
        for (t, r) in self.records.iter().enumerate() {
            for (a, s) in r.candidates.iter().zip(&r.scores) {
                csv.push_str(&format!(
                    "{},{},{},{},{:e},{}\n",
                    t + 1,
                    r.iteration,
                    r.tau,
                    a,
                    s,
                    u8::from(*a == r.action)
                ));
            }
        }
        std::fs::write(dir.join("scores.csv"), csv)?;
        std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&self.timings)?)?;
        Ok(())
    }
}

/// A validated configuration bound to its precomputed schedule.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    sched: NoiseSchedule,
}

enum Acquisition<'a> {
    Active,
    Fixed(&'a ActionSet),
}

impl Agent {
    pub fn new(cfg: AgentConfig, space_len: usize) -> Result<Self> {
        cfg.validate(space_len)?;
        let sched = cfg.schedule()?;
        Ok(Self { cfg, sched })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// Active acquisition over the configured schedule.
    pub fn run_ads(&self, prior: &IsotropicGmm, model: &MeasurementModel, x_true: &[f64]) -> Result<AcquisitionTrace> {
        self.run(prior, model, x_true, Acquisition::Active)
    }

    /// Guided reconstruction with every action of `mask` measured before
    /// the first reverse step.
    pub fn run_fixed_mask(
        &self,
        prior: &IsotropicGmm,
        model: &MeasurementModel,
        x_true: &[f64],
        mask: &ActionSet,
    ) -> Result<AcquisitionTrace> {
        if mask.is_empty() {
            return Err(param("fixed mask must contain at least one action"));
        }
        self.run(prior, model, x_true, Acquisition::Fixed(mask))
    }

    fn run(
        &self,
        prior: &IsotropicGmm,
        model: &MeasurementModel,
        x_true: &[f64],
        mode: Acquisition<'_>,
    ) -> Result<AcquisitionTrace> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let sched = &self.sched;
        let d = model.data_dim();
        check_len(d, x_true.len())?;
        check_len(d, prior.dim())?;
        let space = model.space();
        let guidance = cfg.guidance();
        let policy = cfg.policy();
        let steps = sched.steps();

        let fx_true = model.apply_forward(x_true)?;
        let measure = |action: usize| {
            let mut r = rng::stream(&[cfg.seed, TAG_MEASURE, action as u64]);
            model.acquire_action(&fx_true, action, &mut r)
        };
        let initial: Vec<usize> = match mode {
            Acquisition::Active => cfg.initial_actions.clone(),
            Acquisition::Fixed(mask) => mask.actions().to_vec(),
        };
        let mut actions = ActionSet::with_actions(space, &initial)?;
        let mut y = SparseMeasurement::default();
        for &a in actions.actions() {
            y.extend(measure(a));
        }
        let schedule: BTreeSet<usize> = match mode {
            Acquisition::Active => cfg.acquisition_steps.iter().copied().collect(),
            Acquisition::Fixed(_) => BTreeSet::new(),
        };

        let mut batch = ParticleBatch::initialize(cfg.seed, cfg.particles, d, steps);
        let mut records = Vec::new();
        let mut timings = PhaseTimings::default();

        for k in 0..steps {
            let tau = steps - k;
            let t0 = Instant::now();
            let view = noised_view(prior, tau, sched)?;
            let (c_state, c_clean) = reverse_coefficients(tau, sched);
            let sigma = sched.posterior_sigma(tau);
            let guided = !y.is_empty() && guidance.zeta > 0.0;
            let results: Vec<Result<StepOutput>> = batch
                .states
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let local = view.local(x);
                    let x0 = local.denoise()?;
                    let y_hat = model.apply_forward(&x0)?;
                    let mut r = rng::stream(&[cfg.seed, TAG_STEP, i as u64, tau as u64]);
                    let mut next: Vec<f64> = x
                        .iter()
                        .zip(&x0)
                        .map(|(xi, x0i)| c_state * xi + c_clean * x0i)
                        .collect();
                    if sigma > 0.0 {
                        let z = rng::standard_normal_vec(&mut r, d);
                        for (n, zi) in next.iter_mut().zip(z) {
                            *n += sigma * zi;
                        }
                    }
                    if guided {
                        let grad = guided_gradient_local(&local, view.alpha_bar(), model, &y, &y_hat, guidance.mode)?;
                        next = data_fidelity_step(&next, &grad, &guidance)?;
                    }
                    Ok((next, x0, y_hat))
                })
                .collect();
            let mut states = Vec::with_capacity(cfg.particles);
            let mut x0s = Vec::with_capacity(cfg.particles);
            let mut yhats = Vec::with_capacity(cfg.particles);
            for r in results {
                let (s, x0, yh) = r?;
                states.push(s);
                x0s.push(x0);
                yhats.push(yh);
            }
            batch.states = states;
            batch.x0_hats = x0s;
            batch.y_hats = yhats;
            batch.tau = tau - 1;
            timings.diffusion_s += t0.elapsed().as_secs_f64();

            if (k + 1) % NONFINITE_CHECK_EVERY == 0 || k + 1 == steps {
                if let Some(p) = batch.first_nonfinite() {
                    return Err(AdsError::NonFinite { step: tau, particle: p });
                }
            }

            if schedule.contains(&k) {
                let t1 = Instant::now();
                let remaining = actions.remaining();
                let comps = remaining_components(model, &remaining);
                let particles = MeasurementParticles::new(batch.y_hats.clone())?;
                let scores = action_scores(&particles, &comps, &policy)?;
                let chosen = select_max_entropy(&scores, &remaining)?;
                timings.policy_s += t1.elapsed().as_secs_f64();
                let t2 = Instant::now();
                actions.insert(chosen)?;
                let m = measure(chosen);
                y.extend(m.clone());
                timings.acquisition_s += t2.elapsed().as_secs_f64();
                records.push(AcquisitionRecord {
                    iteration: k,
                    tau,
                    action: chosen,
                    candidates: remaining,
                    scores,
                    measurement: m,
                });
            }
        }
        timings.total_s = start.elapsed().as_secs_f64();
        let site_mask = actions.site_mask(space);
        Ok(AcquisitionTrace {
            policy_calls: records.len(),
            records,
            initial_actions: initial,
            actions,
            measurements: y,
            // after the τ = 1 step the states equal their own Tweedie estimates
            posterior_samples: batch.states,
            site_mask,
            timings,
        })
    }
}

pub fn run_ads(cfg: &AgentConfig, prior: &IsotropicGmm, model: &MeasurementModel, x_true: &[f64]) -> Result<AcquisitionTrace> {
    Agent::new(cfg.clone(), model.space().len())?.run_ads(prior, model, x_true)
}

pub fn run_fixed_mask(
    cfg: &AgentConfig,
    prior: &IsotropicGmm,
    model: &MeasurementModel,
    x_true: &[f64],
    mask: &ActionSet,
) -> Result<AcquisitionTrace> {
    let mut cfg = cfg.clone();
    cfg.initial_actions.clear();
    cfg.acquisition_steps.clear();
    Agent::new(cfg, model.space().len())?.run_fixed_mask(prior, model, x_true, mask)
}
