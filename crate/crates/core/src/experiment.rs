//! End-to-end experiments: data, prior, policies, metrics and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{evenly_partition, run_ads, run_fixed_mask, AcquisitionTrace, PhaseTimings};
use crate::config::{DatasetKind, ExperimentConfig, PolicyKind};
use crate::data::{
    downsample, load_dataset_bin, load_dataset_csv, load_idx, load_idx_labels, pad, planted_structure_dataset,
    shuffled_indices, synth_gmm_dataset, Dataset,
};
use crate::error::{param, AdsError, Result};
use crate::eval::{mask_distribution_entropy, nearest_neighbor_agreement, ssim, magnitude, ImageGeometry, MetricReport, Stat};
use crate::measurement::{build_action_space, write_mask_pgm, ActionSet, DataDomain, MeasurementModel};
use crate::plot::{bar_chart, heatmap, line_chart, panels, BarSeries};
use crate::policy::{baseline_mask, data_variance_weights, BaselineKind};
use crate::prior::{fit_gmm_em, IsotropicGmm};
use crate::rng::{self, TAG_DATA, TAG_MASK, TAG_SAMPLE};

/// Train and test splits after loading, padding, pooling and scaling.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let total = d.train + d.test;
    let full = match d.kind {
        DatasetKind::Planted => planted_structure_dataset(&d.planted, total, cfg.seed)?,
        DatasetKind::Gmm => synth_gmm_dataset(&gmm_source(cfg)?, total, d.gmm.height, d.gmm.width, cfg.seed)?,
        DatasetKind::Idx | DatasetKind::Csv | DatasetKind::Bin => {
            let path = d.path.as_deref().ok_or_else(|| param("dataset path missing"))?;
            let mut ds = match d.kind {
                DatasetKind::Idx => load_idx(path)?,
                DatasetKind::Csv => load_dataset_csv(path)?,
                _ => load_dataset_bin(path)?,
            };
            if let Some(lp) = &d.labels_path {
                ds = ds.with_labels(load_idx_labels(lp)?)?;
            }
            if let Some(p) = d.pad {
                ds = pad(&ds, p, p)?;
            }
            if let Some(f) = d.downsample {
                ds = downsample(&ds, f)?;
            }
            let ds = ds.unit_scaled();
            if ds.len() < total {
                return Err(AdsError::Config {
                    key: "dataset.train".into(),
                    message: format!("train + test = {total} exceeds the {} samples available", ds.len()),
                });
            }
            let order = shuffled_indices(ds.len(), cfg.seed);
            let data = Array2::from_shape_fn((total, ds.dim()), |(i, j)| ds.data[[order[i], j]]);
            let mut picked = Dataset::new(data, ds.height, ds.width, ds.channels, ds.provenance.clone())?;
            if let Some(l) = &ds.labels {
                picked = picked.with_labels(order[..total].iter().map(|&i| l[i]).collect())?;
            }
            picked
        }
    };
    Ok((full.slice(0, d.train)?, full.slice(d.train, total)?))
}

/// Ground-truth mixture behind the `gmm` dataset kind.
pub fn gmm_source(cfg: &ExperimentConfig) -> Result<IsotropicGmm> {
    let g = &cfg.dataset.gmm;
    let d = g.height * g.width;
    let mut r = rng::stream(&[cfg.seed, TAG_DATA, 2]);
    let means = Array2::from_shape_fn((g.components, d), |_| 0.2 + 0.6 * r.random::<f64>());
    IsotropicGmm::new(vec![1.0 / g.components as f64; g.components], means, vec![g.std * g.std; g.components])
}

/// Fit the configured prior on `train`, or load it from disk.
pub fn build_prior(cfg: &ExperimentConfig, train: &Dataset) -> Result<(IsotropicGmm, PriorInfo)> {
    if let Some(path) = &cfg.prior.path {
        let gmm = IsotropicGmm::load_json(path)?;
        if gmm.dim() != train.dim() {
            return Err(AdsError::Config {
                key: "prior.path".into(),
                message: format!("prior has dimension {}, data has {}", gmm.dim(), train.dim()),
            });
        }
        let info = PriorInfo {
            components: gmm.components(),
            source: path.display().to_string(),
            iterations: 0,
            final_log_likelihood: None,
            warnings: Vec::new(),
        };
        return Ok((gmm, info));
    }
    let fit = fit_gmm_em(train.view(), cfg.prior.components, cfg.prior.max_iters, cfg.prior.tol, cfg.seed)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    let info = PriorInfo {
        components: fit.gmm.components(),
        source: "em".into(),
        iterations: fit.iterations,
        final_log_likelihood: fit.log_likelihoods.last().copied(),
        warnings: fit.warnings.clone(),
    };
    Ok((fit.gmm, info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorInfo {
    pub components: usize,
    pub source: String,
    pub iterations: usize,
    pub final_log_likelihood: Option<f64>,
    pub warnings: Vec<String>,
}

/// Everything an experiment needs before running samples.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub prior: IsotropicGmm,
    pub prior_info: PriorInfo,
    pub model: MeasurementModel,
    pub budgets: Vec<usize>,
    pub dv_weights: Vec<f64>,
    pub geometry: ImageGeometry,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_splits(cfg)?;
        let expected = cfg.measurement.domain.channels();
        if train.channels != expected {
            return Err(AdsError::Config {
                key: "measurement.domain".into(),
                message: format!("data has {} channels, domain expects {expected}", train.channels),
            });
        }
        let space = build_action_space(cfg.measurement.action, train.height, train.width)
            .map_err(|e| AdsError::Config { key: "measurement.action".into(), message: e.to_string() })?;
        let model = MeasurementModel::new(cfg.measurement.forward, cfg.measurement.domain, cfg.measurement.noise_std, space)?;
        let budgets = cfg.budgets(model.space().len())?;
        let (prior, prior_info) = build_prior(cfg, &train)?;
        let rows: Vec<Vec<f64>> = train.data.outer_iter().map(|r| r.to_vec()).collect();
        let dv_weights = data_variance_weights(&model, &rows)?;
        let geometry = ImageGeometry {
            height: train.height,
            width: train.width,
            channels: train.channels,
            peak: cfg.eval.peak,
        };
        Ok(Self { cfg: cfg.clone(), train, test, prior, prior_info, model, budgets, dv_weights, geometry })
    }

    pub fn samples(&self) -> usize {
        self.cfg.eval.samples.map_or(self.test.len(), |s| s.min(self.test.len()))
    }

    pub fn sample_seed(&self, sample: usize) -> u64 {
        rng::mix_key(&[self.cfg.seed, TAG_SAMPLE, sample as u64])
    }

    /// The fixed data-variance mask for `budget`, shared by all samples.
    pub fn data_variance_mask(&self, budget: usize) -> Result<Vec<usize>> {
        let mut r = rng::stream(&[self.cfg.seed, TAG_MASK, budget as u64, 0]);
        baseline_mask(BaselineKind::DataVariance, self.model.space().len(), budget, Some(&self.dv_weights), &mut r)
    }

    pub fn random_mask(&self, budget: usize, sample: usize) -> Result<Vec<usize>> {
        let mut r = rng::stream(&[self.cfg.seed, TAG_MASK, budget as u64, 1, sample as u64]);
        baseline_mask(BaselineKind::Random, self.model.space().len(), budget, None, &mut r)
    }

    /// Run one policy on one test sample.
    pub fn run_one(&self, policy: PolicyKind, budget: usize, sample: usize) -> Result<AcquisitionTrace> {
        let x = self.test.row(sample);
        let agent = self.cfg.agent_config(budget, self.sample_seed(sample))?;
        match policy {
            PolicyKind::Ads => run_ads(&agent, &self.prior, &self.model, &x),
            PolicyKind::DataVariance | PolicyKind::Random => {
                let actions = if policy == PolicyKind::Random {
                    self.random_mask(budget, sample)?
                } else {
                    self.data_variance_mask(budget)?
                };
                let mask = ActionSet::with_actions(self.model.space(), &actions)?;
                run_fixed_mask(&agent, &self.prior, &self.model, &x, &mask)
            }
        }
    }
}

/// Metrics of one policy on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub policy: PolicyKind,
    pub budget: usize,
    pub sample: usize,
    pub label: Option<usize>,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ssim_particles: f64,
    pub estimate: Vec<f64>,
    pub trace: AcquisitionTrace,
}

/// Aggregates for one (policy, budget) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub policy: PolicyKind,
    pub budget: usize,
    pub sampling_rate: f64,
    pub samples: usize,
    pub mae: Stat,
    pub psnr: Stat,
    /// SSIM of the posterior mean.
    pub ssim: Stat,
    /// Mean over particles of per-particle SSIM.
    pub ssim_particles: Stat,
    pub mask_entropy_bits: f64,
    pub nn_label_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub provenance: String,
    pub train: usize,
    pub test: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub prior: PriorInfo,
    pub results: Vec<GroupResult>,
}

impl ExperimentSummary {
    pub fn group(&self, policy: PolicyKind, budget: usize) -> Option<&GroupResult> {
        self.results.iter().find(|g| g.policy == policy && g.budget == budget)
    }
}

/// Result of [`run_experiment`]: the summary plus every per-sample outcome.
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub outcomes: Vec<SampleOutcome>,
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| param(e.to_string()))
}

fn group_name(policy: PolicyKind, budget: usize) -> String {
    format!("{}_b{budget}", policy.name())
}

/// Evaluate every configured policy and budget on the test samples. When
/// `out` is given, artifacts are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentRun> {
    let prepared = Prepared::new(cfg)?;
    run_prepared(&prepared, out)
}

pub fn run_prepared(p: &Prepared, out: Option<&Path>) -> Result<ExperimentRun> {
    let started = Instant::now();
    let n = p.samples();
    let combos: Vec<(usize, PolicyKind)> = p
        .budgets
        .iter()
        .flat_map(|&b| p.cfg.eval.policies.iter().map(move |&pol| (b, pol)))
        .collect();
    let pool = thread_pool(p.cfg.workers)?;
    let per_sample: Vec<Result<Vec<SampleOutcome>>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|s| {
                let target = p.test.row(s);
                let label = p.test.labels.as_ref().map(|l| l[s]);
                combos
                    .iter()
                    .map(|&(budget, policy)| {
                        let trace = p.run_one(policy, budget, s)?;
                        score(p, policy, budget, s, label, &target, trace)
                    })
                    .collect()
            })
            .collect()
    });
    let mut outcomes = Vec::with_capacity(n * combos.len());
    for r in per_sample {
        outcomes.extend(r?);
    }
    let actions = p.model.space().len();
    let mut results = Vec::new();
    for &(budget, policy) in &combos {
        let group: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.policy == policy && o.budget == budget).collect();
        let col = |f: fn(&SampleOutcome) -> f64| group.iter().map(|o| f(o)).collect::<Vec<_>>();
        let masks: Vec<Vec<u8>> = group.iter().map(|o| o.trace.actions.inclusion()).collect();
        let (_, entropy) = mask_distribution_entropy(&masks)?;
        let labels: Option<Vec<usize>> = group.iter().map(|o| o.label).collect();
        let nn = match labels {
            Some(l) if masks.len() >= 2 => Some(nearest_neighbor_agreement(&masks, &l)?),
            _ => None,
        };
        results.push(GroupResult {
            policy,
            budget,
            sampling_rate: budget as f64 / actions as f64,
            samples: group.len(),
            mae: Stat::of(&col(|o| o.mae)),
            psnr: Stat::of(&col(|o| o.psnr)),
            ssim: Stat::of(&col(|o| o.ssim)),
            ssim_particles: Stat::of(&col(|o| o.ssim_particles)),
            mask_entropy_bits: entropy,
            nn_label_agreement: nn,
        });
    }
    let summary = ExperimentSummary {
        config: p.cfg.clone(),
        dataset: DatasetInfo {
            provenance: p.test.provenance.clone(),
            train: p.train.len(),
            test: p.test.len(),
            height: p.geometry.height,
            width: p.geometry.width,
            channels: p.geometry.channels,
            actions,
        },
        prior: p.prior_info.clone(),
        results,
    };
    let run = ExperimentRun { summary, outcomes };
    if let Some(dir) = out {
        write_artifacts(p, &run, dir, started.elapsed().as_secs_f64())?;
    }
    Ok(run)
}

fn score(
    p: &Prepared,
    policy: PolicyKind,
    budget: usize,
    sample: usize,
    label: Option<usize>,
    target: &[f64],
    trace: AcquisitionTrace,
) -> Result<SampleOutcome> {
    let estimate = trace.posterior_mean();
    let mut rep = MetricReport::new();
    rep.push(sample, &estimate, target, p.geometry)?;
    let g = p.geometry;
    let tm = magnitude(target, g.channels);
    let per_particle: Vec<f64> = trace
        .posterior_samples
        .iter()
        .map(|x| ssim(&magnitude(x, g.channels), &tm, g.height, g.width, g.peak))
        .collect::<Result<_>>()?;
    Ok(SampleOutcome {
        policy,
        budget,
        sample,
        label,
        mae: rep.mae[0],
        psnr: rep.psnr[0],
        ssim: rep.ssim[0],
        ssim_particles: Stat::of(&per_particle).mean,
        estimate,
        trace,
    })
}

/// `policy,budget,sample_id,mae,psnr,ssim`.
pub fn metrics_csv(outcomes: &[SampleOutcome]) -> String {
    let mut s = String::from("policy,budget,sample_id,mae,psnr,ssim\n");
    for o in outcomes {
        let _ = writeln!(s, "{},{},{},{:?},{:?},{:?}", o.policy.name(), o.budget, o.sample, o.mae, o.psnr, o.ssim);
    }
    s
}

fn write_artifacts(p: &Prepared, run: &ExperimentRun, dir: &Path, elapsed: f64) -> Result<()> {
    for sub in ["masks", "plots", "traces"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let (h, w) = (p.geometry.height, p.geometry.width);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.summary)?)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&run.outcomes))?;

    let mut timings = serde_json::Map::new();
    timings.insert("total_s".into(), elapsed.into());
    for g in &run.summary.results {
        let mut acc = PhaseTimings::default();
        for o in run.outcomes.iter().filter(|o| o.policy == g.policy && o.budget == g.budget) {
            acc.diffusion_s += o.trace.timings.diffusion_s;
            acc.policy_s += o.trace.timings.policy_s;
            acc.acquisition_s += o.trace.timings.acquisition_s;
            acc.total_s += o.trace.timings.total_s;
        }
        timings.insert(group_name(g.policy, g.budget), serde_json::to_value(acc)?);
    }
    fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&timings)?)?;

    let space = p.model.space();
    for g in &run.summary.results {
        let name = group_name(g.policy, g.budget);
        let group: Vec<&SampleOutcome> = run.outcomes.iter().filter(|o| o.policy == g.policy && o.budget == g.budget).collect();
        let mut freq = vec![0.0; h * w];
        for o in &group {
            for (f, m) in freq.iter_mut().zip(&o.trace.site_mask) {
                *f += f64::from(*m) / group.len() as f64;
            }
        }
        let bytes: Vec<u8> = freq.iter().map(|f| (f * 255.0).round() as u8).collect();
        write_mask_pgm(&dir.join("masks").join(format!("{name}.pgm")), &bytes, h, w)?;
        fs::write(
            dir.join("plots").join(format!("masks_{name}.svg")),
            heatmap(&freq, h, w, 0.0, 1.0, &format!("{} inclusion frequency, budget {}", g.policy.name(), g.budget)),
        )?;

        let tdir = dir.join("traces").join(&name);
        fs::create_dir_all(&tdir)?;
        let mut masks = format!("sample_id,label{}\n", (0..space.len()).map(|a| format!(",a{a}")).collect::<String>());
        let mut sites = format!("sample_id,height,width{}\n", (0..h * w).map(|s| format!(",s{s}")).collect::<String>());
        for o in &group {
            let label = o.label.map(|l| l.to_string()).unwrap_or_default();
            let bits: String = o.trace.actions.inclusion().iter().map(|b| format!(",{b}")).collect();
            let _ = writeln!(masks, "{},{label}{bits}", o.sample);
            let sbits: String = o.trace.site_mask.iter().map(|b| format!(",{b}")).collect();
            let _ = writeln!(sites, "{},{h},{w}{sbits}", o.sample);
            if o.sample < p.cfg.eval.trace_samples {
                o.trace.write_dir(&tdir.join(format!("sample_{:04}", o.sample)), h, w)?;
                write_mask_pgm(&dir.join("masks").join(format!("{name}_sample{:04}.pgm", o.sample)), &o.trace.site_mask, h, w)?;
            }
        }
        fs::write(tdir.join("masks.csv"), masks)?;
        fs::write(tdir.join("site_masks.csv"), sites)?;
    }

    let categories: Vec<String> = p.budgets.iter().map(|b| format!("{b} ({:.0}%)", 100.0 * *b as f64 / space.len() as f64)).collect();
    for (metric, pick) in [
        ("mae", (|g: &GroupResult| g.mae) as fn(&GroupResult) -> Stat),
        ("psnr", |g: &GroupResult| g.psnr),
        ("ssim", |g: &GroupResult| g.ssim),
    ] {
        let series: Vec<BarSeries<'_>> = p
            .cfg
            .eval
            .policies
            .iter()
            .map(|&pol| {
                let stats: Vec<Stat> = p.budgets.iter().map(|&b| run.summary.group(pol, b).map_or(Stat { mean: f64::NAN, se: 0.0 }, pick)).collect();
                BarSeries { name: pol.name(), values: stats.iter().map(|s| s.mean).collect(), errors: stats.iter().map(|s| s.se).collect() }
            })
            .collect();
        fs::write(
            dir.join("plots").join(format!("{metric}.svg")),
            bar_chart(&format!("{} by budget", metric.to_uppercase()), &categories, &series, metric),
        )?;
    }

    if p.geometry.channels == 1 {
        let last = *p.budgets.last().unwrap_or(&0);
        for s in 0..p.samples().min(p.cfg.eval.trace_samples) {
            let target = p.test.row(s);
            let mut imgs: Vec<(String, Vec<f64>)> = vec![("target".into(), target)];
            for o in run.outcomes.iter().filter(|o| o.sample == s && o.budget == last) {
                imgs.push((o.policy.name().to_string(), o.estimate.clone()));
            }
            let refs: Vec<(&str, &[f64])> = imgs.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
            fs::write(dir.join("plots").join(format!("recon_sample{s:04}.svg")), panels(&refs, h, w, 0.0, p.cfg.eval.peak))?;
        }
    }
    Ok(())
}

/// Swept parameter of [`run_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Particles,
    SamplingRate,
    SigmaY,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Particles => "n_p",
            SweepAxis::SamplingRate => "sampling_rate",
            SweepAxis::SigmaY => "sigma_y",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::Particles => {
                if !(value >= 2.0 && value.fract() == 0.0) {
                    return Err(param(format!("particle count {value} must be an integer >= 2")));
                }
                c.agent.particles = value as usize;
            }
            SweepAxis::SamplingRate => {
                c.eval.sampling_rates = vec![value];
                c.eval.budgets.clear();
            }
            SweepAxis::SigmaY => c.agent.sigma_y = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub result: GroupResult,
}

/// One experiment per value; results merged into `sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(param("sweep needs at least one value"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let c = axis.apply(cfg, v)?;
        let sub: Option<PathBuf> = out.map(|d| d.join(format!("{}_{v}", axis.name())));
        let run = run_experiment(&c, sub.as_deref())?;
        rows.extend(run.summary.results.into_iter().map(|result| SweepRow { value: v, result }));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("plots"))?;
        let mut csv = format!("{},policy,budget,samples,mae,mae_se,psnr,psnr_se,ssim,ssim_se\n", axis.name());
        for r in &rows {
            let g = &r.result;
            let _ = writeln!(
                csv,
                "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.value, g.policy.name(), g.budget, g.samples, g.mae.mean, g.mae.se, g.psnr.mean, g.psnr.se, g.ssim.mean, g.ssim.se
            );
        }
        fs::write(dir.join("sweep.csv"), csv)?;
        let mut names: Vec<PolicyKind> = Vec::new();
        for r in &rows {
            if !names.contains(&r.result.policy) {
                names.push(r.result.policy);
            }
        }
        let series: Vec<BarSeries<'_>> = names
            .iter()
            .map(|&pol| {
                let pts: Vec<&GroupResult> = values
                    .iter()
                    .filter_map(|v| rows.iter().filter(|r| r.value == *v && r.result.policy == pol).map(|r| &r.result).next_back())
                    .collect();
                BarSeries { name: pol.name(), values: pts.iter().map(|g| g.mae.mean).collect(), errors: pts.iter().map(|g| g.mae.se).collect() }
            })
            .collect();
        fs::write(
            dir.join("plots").join("sweep_mae.svg"),
            line_chart(&format!("MAE vs {}", axis.name()), values, &series, axis.name(), "mae"),
        )?;
    }
    Ok(rows)
}

/// Least-squares line `y = slope·x + intercept` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

pub const BENCH_COUNTS: [usize; 5] = [4, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub count: usize,
    pub particles: usize,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub steps: usize,
    pub rows: Vec<BenchRow>,
    /// The largest count rerun with twice the particles.
    pub doubled_particles: BenchRow,
    pub slope_s_per_measurement: f64,
    pub intercept_s: f64,
    pub r2: f64,
    /// Policy time with doubled particles over policy time at the
    /// configured count, both at the largest measurement count.
    pub doubled_particles_ratio: f64,
}

fn timed_run(p: &Prepared, count: usize, particles: usize, repeats: usize) -> Result<PhaseTimings> {
    let x = p.test.row(0);
    let mut agent = p.cfg.agent_config(p.cfg.agent.initial_actions.len(), p.sample_seed(0))?;
    agent.particles = particles;
    agent.acquisition_steps = evenly_partition(p.cfg.agent.window[0], p.cfg.agent.window[1], count)?;
    let mut best: Option<PhaseTimings> = None;
    for _ in 0..repeats.max(1) {
        let t = run_ads(&agent, &p.prior, &p.model, &x)?.timings;
        if best.as_ref().is_none_or(|b| t.policy_s < b.policy_s) {
            best = Some(t);
        }
    }
    Ok(best.unwrap_or_default())
}

/// Time the acquisition loop for each measurement count in `counts`.
pub fn run_bench(cfg: &ExperimentConfig, counts: &[usize], repeats: usize, out: Option<&Path>) -> Result<BenchReport> {
    let p = Prepared::new(cfg)?;
    let pool = thread_pool(Some(cfg.workers.unwrap_or(1)))?;
    pool.install(|| {
        let np = cfg.agent.particles;
        let mut rows = Vec::new();
        for &c in counts {
            rows.push(BenchRow { count: c, particles: np, timings: timed_run(&p, c, np, repeats)? });
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.timings.policy_s).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        let last = *counts.last().ok_or_else(|| param("bench needs counts"))?;
        let doubled = timed_run(&p, last, 2 * np, repeats)?;
        let base = rows.last().map_or(f64::NAN, |r| r.timings.policy_s);
        let report = BenchReport {
            steps: cfg.agent.steps,
            rows,
            doubled_particles: BenchRow { count: last, particles: 2 * np, timings: doubled.clone() },
            slope_s_per_measurement: slope,
            intercept_s: intercept,
            r2,
            doubled_particles_ratio: doubled.policy_s / base,
        };
        if let Some(dir) = out {
            fs::create_dir_all(dir.join("plots"))?;
            let mut csv = String::from("count,particles,diffusion_s,policy_s,acquisition_s,total_s\n");
            for r in report.rows.iter().chain([&report.doubled_particles]) {
                let t = &r.timings;
                let _ = writeln!(csv, "{},{},{:e},{:e},{:e},{:e}", r.count, r.particles, t.diffusion_s, t.policy_s, t.acquisition_s, t.total_s);
            }
            fs::write(dir.join("bench.csv"), csv)?;
            fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
            let series = [BarSeries { name: "policy", values: ys.clone(), errors: vec![0.0; ys.len()] }];
            fs::write(
                dir.join("plots").join("bench_policy.svg"),
                line_chart(&format!("policy time, R² = {r2:.4}"), &xs, &series, "measurements", "seconds"),
            )?;
        }
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGroupReport {
    pub group: String,
    pub masks: usize,
    pub actions: usize,
    pub mean_entropy_bits: f64,
    pub nn_label_agreement: Option<f64>,
    pub inclusion: Vec<f64>,
}

fn find_mask_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for e in entries {
        if e.is_dir() {
            find_mask_files(&e, out)?;
        } else if e.file_name().is_some_and(|n| n == "masks.csv") {
            out.push(e);
        }
    }
    Ok(())
}

type MaskRows = (Vec<Vec<u8>>, Vec<Option<usize>>);

fn parse_mask_csv(path: &Path) -> Result<MaskRows> {
    let text = fs::read_to_string(path)?;
    let mut masks = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0;
    for (i, line) in text.lines().enumerate() {
        let bad = |m: String| AdsError::Format { offset, message: m };
        if i > 0 && !line.trim().is_empty() {
            let mut fields = line.split(',');
            fields.next();
            let label = fields.next().unwrap_or("");
            labels.push(if label.is_empty() { None } else { Some(label.parse().map_err(|e| bad(format!("{e}")))?) });
            masks.push(fields.map(|f| f.trim().parse::<u8>().map_err(|e| bad(format!("{e}")))).collect::<Result<Vec<_>>>()?);
        }
        offset += line.len() + 1;
    }
    Ok((masks, labels))
}

/// Mask entropy and nearest-neighbour label agreement for every
/// `masks.csv` found under `dir`.
pub fn analyze_masks(dir: &Path, out: Option<&Path>) -> Result<Vec<MaskGroupReport>> {
    let mut files = Vec::new();
    find_mask_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(param(format!("no masks.csv under {}", dir.display())));
    }
    let mut reports = Vec::new();
    for f in &files {
        let (masks, labels) = parse_mask_csv(f)?;
        if masks.is_empty() {
            continue;
        }
        let (inclusion, entropy) = mask_distribution_entropy(&masks)?;
        let labels: Option<Vec<usize>> = labels.into_iter().collect();
        let nn = match labels {
            Some(l) if masks.len() >= 2 => Some(nearest_neighbor_agreement(&masks, &l)?),
            _ => None,
        };
        let group = f.parent().and_then(|p| p.file_name()).map_or_else(|| "masks".into(), |n| n.to_string_lossy().into_owned());
        reports.push(MaskGroupReport { group, masks: masks.len(), actions: inclusion.len(), mean_entropy_bits: entropy, nn_label_agreement: nn, inclusion });
    }
    if let Some(o) = out {
        fs::create_dir_all(o.join("plots"))?;
        let mut csv = String::from("group,masks,actions,mean_entropy_bits,nn_label_agreement\n");
        for r in &reports {
            let nn = r.nn_label_agreement.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{:?},{nn}", r.group, r.masks, r.actions, r.mean_entropy_bits);
        }
        fs::write(o.join("mask_entropy.csv"), csv)?;
        fs::write(o.join("mask_entropy.json"), serde_json::to_string_pretty(&reports)?)?;
        let categories: Vec<String> = reports.iter().map(|r| r.group.clone()).collect();
        let series = [BarSeries {
            name: "entropy (bits)",
            values: reports.iter().map(|r| r.mean_entropy_bits).collect(),
            errors: vec![0.0; reports.len()],
        }];
        fs::write(o.join("plots").join("mask_entropy.svg"), bar_chart("mean Bernoulli mask entropy", &categories, &series, "bits"))?;
    }
    Ok(reports)
}

/// Fit the configured prior on the training split and save it.
pub fn fit_prior_to(cfg: &ExperimentConfig, path: &Path) -> Result<PriorInfo> {
    cfg.validate()?;
    let (train, _) = load_splits(cfg)?;
    let (gmm, info) = build_prior(cfg, &train)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    gmm.save_json(path)?;
    Ok(info)
}

/// Whether the domain produces magnitude images for SSIM.
pub fn is_complex(cfg: &ExperimentConfig) -> bool {
    cfg.measurement.domain == DataDomain::Complex
}
