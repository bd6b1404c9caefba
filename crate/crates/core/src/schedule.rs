//! Discrete variance-preserving noise schedules.

use serde::{Deserialize, Serialize};

use crate::error::{param, AdsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Precomputed coefficients of a `T`-step discrete diffusion.
///
/// Step indices run over `1..=T`. `alpha_bar(0)` is 1 so that lookups of
/// the previous step never need a special case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    one_minus_alpha_bars: Vec<f64>,
    posterior_sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Build a schedule from explicit per-step rates.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(param("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(param(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        // 1 − ᾱ_τ accumulated as (1 − ᾱ_{τ−1}) + ᾱ_{τ−1} β_τ, which keeps it
        // exact at τ = 1 and avoids cancellation for small β
        let mut one_minus_alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        one_minus_alpha_bars.push(0.0);
        for (a, b) in alphas.iter().zip(&betas) {
            let prev = *alpha_bars.last().unwrap();
            let prev_om = *one_minus_alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
            one_minus_alpha_bars.push(prev_om + prev * b);
        }
        let posterior_sigmas = betas
            .iter()
            .enumerate()
            .map(|(i, b)| (b * one_minus_alpha_bars[i] / one_minus_alpha_bars[i + 1]).sqrt())
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            one_minus_alpha_bars,
            posterior_sigmas,
        })
    }

    pub fn build(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        match kind {
            ScheduleKind::Linear => build_linear_schedule(steps, beta_min, beta_max),
            ScheduleKind::Cosine => build_cosine_schedule(steps, beta_max),
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, tau: usize) -> Result<()> {
        if tau == 0 || tau > self.steps() {
            return Err(AdsError::Index {
                index: tau,
                min: 1,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// β_τ for `tau` in `1..=T`.
    pub fn beta(&self, tau: usize) -> f64 {
        self.betas[tau - 1]
    }

    pub fn alpha(&self, tau: usize) -> f64 {
        self.alphas[tau - 1]
    }

    /// Cumulative product ᾱ_τ for `tau` in `0..=T`.
    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bars[tau]
    }

    /// 1 − ᾱ_τ, accumulated without cancellation.
    pub fn one_minus_alpha_bar(&self, tau: usize) -> f64 {
        self.one_minus_alpha_bars[tau]
    }

    /// Standard deviation of the ancestral step noise at `tau`.
    pub fn posterior_sigma(&self, tau: usize) -> f64 {
        self.posterior_sigmas[tau - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_sigmas(&self) -> &[f64] {
        &self.posterior_sigmas
    }

    /// Validate a step index, returning it unchanged.
    pub fn step(&self, tau: usize) -> Result<usize> {
        self.check(tau)?;
        Ok(tau)
    }
}

/// `steps` rates spaced linearly from `beta_min` to `beta_max` inclusive.
pub fn build_linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(param("step count must be >= 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(param(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_min]
    } else {
        let span = beta_max - beta_min;
        (0..steps)
            .map(|i| beta_min + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// Cosine schedule with offset 0.008; per-step rates are clipped to `beta_cap`.
pub fn build_cosine_schedule(steps: usize, beta_cap: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(param("step count must be >= 1"));
    }
    if !(beta_cap > 0.0 && beta_cap < 1.0) {
        return Err(param(format!("beta cap {beta_cap} outside (0, 1)")));
    }
    let s = 0.008;
    let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let betas = (1..=steps)
        .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, beta_cap))
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Sample `x_τ ~ q(x_τ | x_0)` given a standard normal `noise` draw.
pub fn forward_noise(x0: &[f64], tau: usize, sched: &NoiseSchedule, noise: &[f64]) -> Result<Vec<f64>> {
    sched.check(tau)?;
    crate::error::check_len(x0.len(), noise.len())?;
    let ab = sched.alpha_bar(tau);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn single_step_identities() {
        let s = build_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
        assert_eq!(s.posterior_sigma(1), 0.0);
    }

    #[test]
    fn two_step_hand_arithmetic() {
        let s = build_linear_schedule(2, 0.1, 0.3).unwrap();
        assert!((s.alpha_bar(2) - 0.63).abs() < 1e-15);
        let expected = 0.3 * (1.0 - 0.9) / (1.0 - 0.63);
        assert!((s.posterior_sigma(2).powi(2) - expected).abs() < 1e-15);
    }

    /// Product of the 1000 factors accumulated in double-double arithmetic.
    fn product_oracle(betas: &[f64]) -> f64 {
        // (hi, lo) pair with error-free transforms
        let two_prod = |a: f64, b: f64| {
            let p = a * b;
            (p, a.mul_add(b, -p))
        };
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for b in betas {
            // 1 - b exactly as a double-double
            let a_hi = 1.0 - b;
            let a_lo = (1.0 - a_hi) - b;
            let (p, e) = two_prod(hi, a_hi);
            let e = e + hi * a_lo + lo * a_hi;
            hi = p + e;
            lo = e - (hi - p);
        }
        hi + lo
    }

    #[test]
    fn thousand_step_alpha_bar_matches_extended_product() {
        let s = build_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let oracle = product_oracle(s.betas());
        assert!(((s.alpha_bar(1000) - oracle) / oracle).abs() < 1e-12);
        assert!(((oracle - 4.04e-5) / 4.04e-5).abs() < 5e-3, "oracle {oracle}");
    }

    #[test]
    fn rejects_invalid_ranges() {
        assert!(build_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(build_linear_schedule(10, 0.3, 0.2).is_err());
        assert!(build_linear_schedule(10, 0.0, 0.2).is_err());
        assert!(build_linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_deterministic_branch_and_identity_limit() {
        let s = build_linear_schedule(10, 1e-4, 0.02).unwrap();
        let x = [1.0, -2.0, 3.0];
        let out = forward_noise(&x, 5, &s, &[0.0; 3]).unwrap();
        let a = s.alpha_bar(5).sqrt();
        for (o, xi) in out.iter().zip(x) {
            assert_eq!(*o, a * xi);
        }
        let tiny = build_linear_schedule(10, 1e-10, 1e-9).unwrap();
        let out = forward_noise(&x, 1, &tiny, &[0.3, 0.1, -0.2]).unwrap();
        for (o, xi) in out.iter().zip(x) {
            assert!((o - xi).abs() < 1e-4);
        }
        assert!(forward_noise(&x, 0, &s, &[0.0; 3]).is_err());
        assert!(forward_noise(&x, 11, &s, &[0.0; 3]).is_err());
    }

    #[test]
    fn forward_noise_monte_carlo_moments() {
        let s = build_linear_schedule(100, 1e-4, 0.02).unwrap();
        let tau = 60;
        let x0 = [0.7];
        let n = 100_000;
        let mut r = rng::stream(&[42]);
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z = rng::standard_normal_vec(&mut r, 1);
                forward_noise(&x0, tau, &s, &z).unwrap()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(tau);
        let true_var = 1.0 - ab;
        let se_mean = (true_var / n as f64).sqrt();
        let se_var = true_var * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - ab.sqrt() * 0.7).abs() < 3.0 * se_mean);
        assert!((var - true_var).abs() < 3.0 * se_var);
    }

    #[test]
    fn cosine_schedule_is_valid() {
        let s = build_cosine_schedule(200, 0.999).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #[test]
        fn schedule_invariants(steps in 1usize..400, lo in 1e-5f64..0.05, span in 0.0f64..0.5) {
            let hi = (lo + span).min(0.9);
            let s = build_linear_schedule(steps, lo, hi).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            prop_assert_eq!(s.posterior_sigma(1), 0.0);
            for tau in 1..=steps {
                prop_assert!(s.alpha_bar(tau) > 0.0);
                prop_assert!(s.alpha_bar(tau) < s.alpha_bar(tau - 1));
                prop_assert_eq!(s.alpha_bar(tau), s.alpha_bar(tau - 1) * s.alpha(tau));
                prop_assert!(s.posterior_sigma(tau).powi(2) <= s.beta(tau) * (1.0 + 1e-12));
            }
        }
    }
}
