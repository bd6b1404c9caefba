//! Isotropic Gaussian-mixture diffusion prior.
//!
//! A mixture with isotropic components stays a mixture under the Gaussian
//! noising process, so the noised score, the Tweedie denoiser and its
//! Jacobian all have closed forms. Those stand in for a learned score
//! network.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, AdsError, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

pub const VARIANCE_FLOOR: f64 = 1e-6;
const ALPHA_BAR_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicGmm {
    weights: Vec<f64>,
    means: Array2<f64>,
    variances: Vec<f64>,
}

impl IsotropicGmm {
    pub fn new(weights: Vec<f64>, means: Array2<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(param("mixture needs at least one component"));
        }
        if means.nrows() != k || variances.len() != k {
            return Err(param(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                means.nrows(),
                variances.len()
            )));
        }
        if means.ncols() == 0 {
            return Err(param("mixture dimension must be >= 1"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(param("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(param(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(param("component variances must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(param("component means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single isotropic Gaussian `N(mean, variance I)`.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        let means = Array2::from_shape_vec((1, d), mean).map_err(|e| param(e.to_string()))?;
        Self::new(vec![1.0], means, vec![variance])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture mean Σ w_k μ_k.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, row) in self.weights.iter().zip(self.means.rows()) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += w * m;
            }
        }
        out
    }

    /// Draw one sample, returning its component index alongside it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = self.variances[k].sqrt();
        let mut x = rng::standard_normal_vec(rng, self.dim());
        for (xi, m) in x.iter_mut().zip(self.means.row(k)) {
            *xi = m + sd * *xi;
        }
        (k, x)
    }

    /// Log density of the clean (step 0) mixture.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.view_at(1.0, 0.0).log_density(x)
    }

    fn view_at(&self, alpha_bar: f64, one_minus: f64) -> NoisedGmmView {
        let scale = alpha_bar.sqrt();
        let means = self.means.mapv(|m| scale * m);
        let variances = self
            .variances
            .iter()
            .map(|s2| alpha_bar * s2 + one_minus)
            .collect();
        NoisedGmmView {
            tau: 0,
            alpha_bar,
            one_minus,
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            means,
            variances,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = GmmFile {
            format: GMM_FORMAT.to_string(),
            version: GMM_VERSION,
            dim: self.dim(),
            components: self.components(),
            weights: self.weights.clone(),
            means: self.means.rows().into_iter().map(|r| r.to_vec()).collect(),
            variances: self.variances.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GmmFile = serde_json::from_str(&text)?;
        if file.format != GMM_FORMAT || file.version != GMM_VERSION {
            return Err(AdsError::Format {
                offset: 0,
                message: format!("unsupported prior file {} v{}", file.format, file.version),
            });
        }
        if file.means.len() != file.components || file.means.iter().any(|r| r.len() != file.dim) {
            return Err(AdsError::Format {
                offset: 0,
                message: "means do not match declared dim/components".into(),
            });
        }
        let flat: Vec<f64> = file.means.into_iter().flatten().collect();
        let means = Array2::from_shape_vec((file.components, file.dim), flat)
            .map_err(|e| param(e.to_string()))?;
        Self::new(file.weights, means, file.variances)
    }
}

const GMM_FORMAT: &str = "ads-isotropic-gmm";
const GMM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GmmFile {
    format: String,
    version: u32,
    dim: usize,
    components: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

/// The prior marginal at step τ: means scaled by √ᾱ_τ, variances
/// `ᾱ_τ s_k² + 1 − ᾱ_τ`.
#[derive(Debug, Clone)]
pub struct NoisedGmmView {
    tau: usize,
    alpha_bar: f64,
    one_minus: f64,
    log_weights: Vec<f64>,
    means: Array2<f64>,
    variances: Vec<f64>,
}

pub fn noised_view(prior: &IsotropicGmm, tau: usize, sched: &NoiseSchedule) -> Result<NoisedGmmView> {
    let tau = sched.step(tau)?;
    let mut view = prior.view_at(sched.alpha_bar(tau), sched.one_minus_alpha_bar(tau));
    view.tau = tau;
    Ok(view)
}

impl NoisedGmmView {
    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Per-component log joint `log w_k + log N(x; m_k, v_k I)`.
    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.means
            .rows()
            .into_iter()
            .zip(&self.variances)
            .zip(&self.log_weights)
            .map(|((m, v), lw)| {
                let sq: f64 = m.iter().zip(x).map(|(mi, xi)| (xi - mi) * (xi - mi)).sum();
                lw - 0.5 * d * (2.0 * PI * v).ln() - 0.5 * sq / v
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    /// Component responsibilities at `x`, computed in the log domain.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        for l in lj.iter_mut() {
            *l = (*l - lse).exp();
        }
        lj
    }

    /// Responsibilities and per-component score directions at `x`.
    pub fn local(&self, x: &[f64]) -> LocalPosterior {
        let d = self.dim();
        let gammas = self.responsibilities(x);
        let k = gammas.len();
        let mut dirs = vec![0.0; k * d];
        let mut score = vec![0.0; d];
        for (c, (m, v)) in self.means.rows().into_iter().zip(&self.variances).enumerate() {
            let g = &mut dirs[c * d..(c + 1) * d];
            for ((gi, mi), xi) in g.iter_mut().zip(m).zip(x) {
                *gi = (mi - xi) / v;
            }
            let gamma = gammas[c];
            if gamma > 0.0 {
                for (s, gi) in score.iter_mut().zip(g.iter()) {
                    *s += gamma * gi;
                }
            }
        }
        LocalPosterior {
            alpha_bar: self.alpha_bar,
            one_minus: self.one_minus,
            gammas,
            inv_var: self.variances.iter().map(|v| 1.0 / v).collect(),
            dirs,
            score,
            x: x.to_vec(),
        }
    }
}

/// Everything needed to evaluate the score, the Tweedie estimate and
/// Jacobian-vector products at one point.
#[derive(Debug, Clone)]
pub struct LocalPosterior {
    alpha_bar: f64,
    one_minus: f64,
    gammas: Vec<f64>,
    inv_var: Vec<f64>,
    dirs: Vec<f64>,
    score: Vec<f64>,
    x: Vec<f64>,
}

impl LocalPosterior {
    pub fn score(&self) -> &[f64] {
        &self.score
    }

    pub fn responsibilities(&self) -> &[f64] {
        &self.gammas
    }

    fn check_alpha_bar(&self) -> Result<()> {
        if self.alpha_bar < ALPHA_BAR_MIN {
            return Err(AdsError::Numerical(format!(
                "alpha_bar {:e} too small for the denoiser",
                self.alpha_bar
            )));
        }
        Ok(())
    }

    /// x̂_0 = (x + (1 − ᾱ) score) / √ᾱ.
    pub fn denoise(&self) -> Result<Vec<f64>> {
        self.check_alpha_bar()?;
        let ab = self.alpha_bar;
        let inv = 1.0 / ab.sqrt();
        Ok(self
            .x
            .iter()
            .zip(&self.score)
            .map(|(x, s)| (x + self.one_minus * s) * inv)
            .collect())
    }

    /// Hessian of the noised log density applied to `v`.
    pub fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.x.len();
        let mean_prec: f64 = self.gammas.iter().zip(&self.inv_var).map(|(g, p)| g * p).sum();
        let sv: f64 = self.score.iter().zip(v).map(|(s, vi)| s * vi).sum();
        let mut out: Vec<f64> = v
            .iter()
            .zip(&self.score)
            .map(|(vi, s)| -mean_prec * vi - s * sv)
            .collect();
        for (c, gamma) in self.gammas.iter().enumerate() {
            if *gamma == 0.0 {
                continue;
            }
            let g = &self.dirs[c * d..(c + 1) * d];
            let gv: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
            let w = gamma * gv;
            for (o, gi) in out.iter_mut().zip(g) {
                *o += w * gi;
            }
        }
        out
    }

    /// vᵀJ with J = ∂x̂_0/∂x_τ = (I + (1 − ᾱ) H) / √ᾱ. J is symmetric.
    pub fn jacobian_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha_bar()?;
        check_len(self.x.len(), v.len())?;
        let ab = self.alpha_bar;
        let inv = 1.0 / ab.sqrt();
        let hv = self.hessian_apply(v);
        Ok(v
            .iter()
            .zip(hv)
            .map(|(vi, h)| (vi + self.one_minus * h) * inv)
            .collect())
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact score ∇ log p_τ(x) of the noised prior.
pub fn score(view: &NoisedGmmView, x: &[f64]) -> Vec<f64> {
    view.local(x).score
}

/// Exact conditional mean E[x_0 | x_τ].
pub fn tweedie_denoise(
    prior: &IsotropicGmm,
    x_tau: &[f64],
    tau: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_len(prior.dim(), x_tau.len())?;
    noised_view(prior, tau, sched)?.local(x_tau).denoise()
}

/// vᵀ ∂x̂_0/∂x_τ in closed form.
pub fn tweedie_jacobian_apply(
    prior: &IsotropicGmm,
    x_tau: &[f64],
    tau: usize,
    sched: &NoiseSchedule,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len(prior.dim(), x_tau.len())?;
    noised_view(prior, tau, sched)?.local(x_tau).jacobian_apply(v)
}

/// Outcome of an EM fit.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: IsotropicGmm,
    /// Average log-likelihood before each M-step, plus the final value.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Fit an isotropic mixture by expectation-maximisation.
///
/// Means start from k-means++ seeding on `seed`; variances start at the
/// pooled per-coordinate variance.
pub fn fit_gmm_em(
    dataset: ArrayView2<f64>,
    components: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<EmFit> {
    let (n, d) = dataset.dim();
    if n == 0 || d == 0 {
        return Err(param("EM needs a non-empty dataset"));
    }
    if components == 0 || components > n {
        return Err(param(format!(
            "component count {components} must be in [1, {n}]"
        )));
    }
    let mut warnings = Vec::new();
    let mut means = kmeanspp_init(dataset, components, seed);
    let global_mean = dataset.mean_axis(Axis(0)).unwrap();
    let pooled = dataset
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&global_mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / (n * d) as f64;
    let mut variances = vec![pooled.max(VARIANCE_FLOOR); components];
    let mut weights = vec![1.0 / components as f64; components];

    let rows: Vec<Vec<f64>> = dataset.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut resp = vec![0.0; n * components];
    let mut lls = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        let ll = e_step(&rows, &weights, &means, &variances, &mut resp);
        if let Some(prev) = lls.last() {
            if ll - prev < tol {
                lls.push(ll);
                break;
            }
        }
        lls.push(ll);
        iterations += 1;
        m_step(&rows, &resp, &mut weights, &mut means, &mut variances, &mut warnings);
    }
    if lls.len() == iterations {
        let ll = e_step(&rows, &weights, &means, &variances, &mut resp);
        lls.push(ll);
    }
    let gmm = IsotropicGmm::new(normalize(weights), means, variances)?;
    Ok(EmFit {
        gmm,
        log_likelihoods: lls,
        iterations,
        warnings,
    })
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    w
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeanspp_init(data: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = data.nrows();
    let mut r = rng::stream(&[seed, 0xE4]);
    let mut chosen = vec![r.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(&data.row(i).to_vec(), &data.row(chosen[0]).to_vec()))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let u = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with a chosen centre
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let c = data.row(next).to_vec();
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(sq_dist(&data.row(i).to_vec(), &c));
        }
    }
    let mut means = Array2::zeros((k, data.ncols()));
    for (row, &i) in chosen.iter().enumerate() {
        means.row_mut(row).assign(&data.row(i));
    }
    means
}

/// Fills `resp` (n × k, row-major) and returns the average log-likelihood.
fn e_step(rows: &[Vec<f64>], weights: &[f64], means: &Array2<f64>, variances: &[f64], resp: &mut [f64]) -> f64 {
    let k = weights.len();
    let d = means.ncols() as f64;
    let consts: Vec<f64> = weights
        .iter()
        .zip(variances)
        .map(|(w, v)| if *w > 0.0 { w.ln() - 0.5 * d * (2.0 * PI * v).ln() } else { f64::NEG_INFINITY })
        .collect();
    let means_rows: Vec<Vec<f64>> = means.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut total = 0.0;
    for (i, x) in rows.iter().enumerate() {
        let r = &mut resp[i * k..(i + 1) * k];
        for c in 0..k {
            r[c] = consts[c] - 0.5 * sq_dist(x, &means_rows[c]) / variances[c];
        }
        let lse = log_sum_exp(r);
        total += lse;
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    total / rows.len() as f64
}

fn m_step(
    rows: &[Vec<f64>],
    resp: &[f64],
    weights: &mut [f64],
    means: &mut Array2<f64>,
    variances: &mut [f64],
    warnings: &mut Vec<String>,
) {
    let n = rows.len();
    let k = weights.len();
    let d = means.ncols();
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
        if nk <= f64::MIN_POSITIVE {
            // empty component: keep its parameters, drop its weight
            weights[c] = 0.0;
            continue;
        }
        let mut mu = vec![0.0; d];
        for (i, x) in rows.iter().enumerate() {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            for (m, xi) in mu.iter_mut().zip(x) {
                *m += r * xi;
            }
        }
        for m in mu.iter_mut() {
            *m /= nk;
        }
        let ss: f64 = rows
            .iter()
            .enumerate()
            .map(|(i, x)| resp[i * k + c] * sq_dist(x, &mu))
            .sum();
        let mut var = ss / (nk * d as f64);
        if var < VARIANCE_FLOOR {
            warnings.push(format!(
                "component {c} variance {var:e} clamped to floor {VARIANCE_FLOOR:e}"
            ));
            var = VARIANCE_FLOOR;
        }
        weights[c] = nk / n as f64;
        means.row_mut(c).assign(&ndarray::ArrayView1::from(&mu));
        variances[c] = var;
    }
}
