//! Maximum-entropy action selection and fixed-design baselines.
//!
//! The simulated measurements of the particles define an equal-weight
//! isotropic Gaussian mixture of width σ_y. Its entropy is approximated by
//! pairwise log-sum-exp terms, and because a candidate action only changes
//! the coordinates it covers, each action is scored from the squared
//! particle differences on its own coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, Result};
use crate::measurement::MeasurementModel;
use crate::prior::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentSign {
    /// `Σ_i log Σ_j exp(+D_ij / 2σ²)`.
    #[default]
    Positive,
    /// `−Σ_i log Σ_j exp(−D_ij / 2σ²)`.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub sigma_y: f64,
    #[serde(default)]
    pub exponent_sign: ExponentSign,
}

impl PolicyConfig {
    pub fn new(sigma_y: f64, exponent_sign: ExponentSign) -> Result<Self> {
        let c = Self { sigma_y, exponent_sign };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_y > 0.0) || !self.sigma_y.is_finite() {
            return Err(param(format!("sigma_y {} must be positive", self.sigma_y)));
        }
        Ok(())
    }

    fn sign(&self) -> f64 {
        match self.exponent_sign {
            ExponentSign::Positive => 1.0,
            ExponentSign::Negative => -1.0,
        }
    }
}

/// Simulated full measurements `ŷ⁽ⁱ⁾ = f(x̂_0⁽ⁱ⁾)`, one row per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementParticles {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MeasurementParticles {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(param("particle measurements must share one length"));
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn particles(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Σ_i w log Σ_j w exp(±D_ij/2σ²) from a full pairwise distance table.
fn pairwise_entropy(n: usize, dist: impl Fn(usize, usize) -> f64, cfg: &PolicyConfig) -> f64 {
    let sign = cfg.sign();
    let scale = 1.0 / (2.0 * cfg.sigma_y * cfg.sigma_y);
    let log_w = -(n as f64).ln();
    let mut terms = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for (j, t) in terms.iter_mut().enumerate() {
            *t = log_w + sign * dist(i, j) * scale;
        }
        total += log_sum_exp(&terms) / n as f64;
    }
    sign * total
}

/// Pairwise-distance entropy approximation over `restrict` (all
/// coordinates when `None`), equal particle weights, constant dropped.
pub fn entropy_estimate(p: &MeasurementParticles, restrict: Option<&[usize]>, cfg: &PolicyConfig) -> Result<f64> {
    if p.particles() < 2 {
        return Err(param("entropy scoring needs at least two particles"));
    }
    let all: Vec<usize>;
    let coords = match restrict {
        Some(c) => c,
        None => {
            all = (0..p.dim()).collect();
            &all
        }
    };
    if let Some(&bad) = coords.iter().find(|&&c| c >= p.dim()) {
        return Err(param(format!("coordinate {bad} outside measurement of {}", p.dim())));
    }
    let dist = |i: usize, j: usize| {
        let (a, b) = (p.row(i), p.row(j));
        coords.iter().map(|&c| (a[c] - b[c]).powi(2)).sum::<f64>()
    };
    Ok(pairwise_entropy(p.particles(), dist, cfg))
}

/// Score every action in `remaining` (given as lists of measurement
/// components) with the per-action pairwise log-sum-exp.
///
/// Squared differences are accumulated per action in one pass over particle
/// pairs, O(N_p² · M).
pub fn action_scores(
    p: &MeasurementParticles,
    remaining: &[Vec<usize>],
    cfg: &PolicyConfig,
) -> Result<Vec<f64>> {
    if remaining.is_empty() {
        return Err(param("no remaining actions to score"));
    }
    let n = p.particles();
    if n < 2 {
        return Err(param("entropy scoring needs at least two particles"));
    }
    let na = remaining.len();
    // flatten components with their action slot for a single sweep
    let mut comp = Vec::new();
    let mut slot = Vec::new();
    for (a, cs) in remaining.iter().enumerate() {
        for &c in cs {
            if c >= p.dim() {
                return Err(param(format!("component {c} outside measurement of {}", p.dim())));
            }
            comp.push(c);
            slot.push(a);
        }
    }
    // dist[(i, j) upper triangle][action]
    let pairs = n * (n - 1) / 2;
    let mut dist = vec![0.0; pairs * na];
    let mut k = 0;
    for i in 0..n {
        let a = p.row(i);
        for j in i + 1..n {
            let b = p.row(j);
            let row = &mut dist[k * na..(k + 1) * na];
            for (&c, &s) in comp.iter().zip(&slot) {
                let diff = a[c] - b[c];
                row[s] += diff * diff;
            }
            k += 1;
        }
    }
    let pair_index = |i: usize, j: usize| {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    };
    let sign = cfg.sign();
    let scale = 1.0 / (2.0 * cfg.sigma_y * cfg.sigma_y);
    let mut scores = vec![0.0; na];
    let mut terms = vec![0.0; n];
    for (a, score) in scores.iter_mut().enumerate() {
        let mut total = 0.0;
        for i in 0..n {
            for (j, t) in terms.iter_mut().enumerate() {
                *t = if i == j {
                    0.0
                } else {
                    sign * dist[pair_index(i, j) * na + a] * scale
                };
            }
            total += log_sum_exp(&terms);
        }
        *score = sign * total;
    }
    Ok(scores)
}

/// Components of each remaining action under `model`.
pub fn remaining_components(model: &MeasurementModel, remaining: &[usize]) -> Vec<Vec<usize>> {
    remaining.iter().map(|&a| model.action_components(a)).collect()
}

/// The remaining action with the highest score; ties go to the lowest index.
pub fn select_max_entropy(scores: &[f64], remaining: &[usize]) -> Result<usize> {
    check_len(remaining.len(), scores.len())?;
    if scores.is_empty() {
        return Err(param("no scores to select from"));
    }
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && remaining[i] < remaining[best]);
        if better {
            best = i;
        }
    }
    Ok(remaining[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    DataVariance,
}

/// Draw the next action from a uniform or variance-weighted categorical
/// over `remaining`. `weights` is indexed by action identifier.
pub fn baseline_next_action<R: Rng + ?Sized>(
    kind: BaselineKind,
    remaining: &[usize],
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<usize> {
    if remaining.is_empty() {
        return Err(param("no remaining actions"));
    }
    if remaining.len() == 1 {
        return Ok(remaining[0]);
    }
    let uniform = |rng: &mut R| remaining[rng.random_range(0..remaining.len())];
    match kind {
        BaselineKind::Random => Ok(uniform(rng)),
        BaselineKind::DataVariance => {
            let w = weights.ok_or_else(|| param("data-variance sampling needs weights"))?;
            let mass: Vec<f64> = remaining.iter().map(|&a| w[a].max(0.0)).collect();
            let total: f64 = mass.iter().sum();
            if !(total > 0.0) {
                log::warn!("all data-variance weights are zero; sampling uniformly");
                return Ok(uniform(rng));
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last = remaining[0];
            for (&a, m) in remaining.iter().zip(&mass) {
                if *m <= 0.0 {
                    continue;
                }
                acc += m;
                last = a;
                if u < acc {
                    return Ok(a);
                }
            }
            Ok(last)
        }
    }
}

/// Draw `count` actions without replacement.
pub fn baseline_mask<R: Rng + ?Sized>(
    kind: BaselineKind,
    space_len: usize,
    count: usize,
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count > space_len {
        return Err(param(format!("cannot draw {count} of {space_len} actions")));
    }
    let mut remaining: Vec<usize> = (0..space_len).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let a = baseline_next_action(kind, &remaining, weights, rng)?;
        remaining.retain(|r| *r != a);
        chosen.push(a);
    }
    Ok(chosen)
}

/// Per-action sum of per-component sample variance of `f(x)` over `rows`.
pub fn data_variance_weights(model: &MeasurementModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.len() < 2 {
        return Err(param("data-variance weights need at least two samples"));
    }
    let m = model.measurement_dim();
    let mut mean = vec![0.0; m];
    let mut m2 = vec![0.0; m];
    for (n, x) in rows.iter().enumerate() {
        let y = model.apply_forward(x)?;
        // Welford update
        for c in 0..m {
            let delta = y[c] - mean[c];
            mean[c] += delta / (n + 1) as f64;
            m2[c] += delta * (y[c] - mean[c]);
        }
    }
    let var: Vec<f64> = m2.iter().map(|v| v / (rows.len() - 1) as f64).collect();
    Ok((0..model.space().len())
        .map(|a| model.action_components(a).iter().map(|&c| var[c]).sum())
        .collect())
}
