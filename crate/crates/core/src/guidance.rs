//! Ancestral reverse step and the measurement-guided correction.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, Result};
use crate::measurement::{MeasurementModel, SparseMeasurement};
use crate::prior::{noised_view, IsotropicGmm, LocalPosterior};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// Back-propagate through the closed-form denoiser Jacobian.
    #[default]
    ExactJacobian,
    /// Treat ∂x̂_0/∂x_τ as I/√ᾱ_τ.
    IdentityJacobian,
    /// Central differences of the loss; test use only.
    FiniteDifferenceOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub zeta: f64,
    #[serde(default)]
    pub mode: GuidanceMode,
}

impl GuidanceConfig {
    pub fn new(zeta: f64, mode: GuidanceMode) -> Result<Self> {
        let cfg = Self { zeta, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(param(format!("guidance weight {} must be finite and >= 0", self.zeta)));
        }
        Ok(())
    }
}

/// The two deterministic coefficients of the ancestral step at `tau`.
pub fn reverse_coefficients(tau: usize, sched: &NoiseSchedule) -> (f64, f64) {
    let om = sched.one_minus_alpha_bar(tau);
    let om_prev = sched.one_minus_alpha_bar(tau - 1);
    let c_state = sched.alpha(tau).sqrt() * om_prev / om;
    let c_clean = sched.alpha_bar(tau - 1).sqrt() * sched.beta(tau) / om;
    (c_state, c_clean)
}

/// x'_{τ−1} = c_state x_τ + c_clean x̂_0 + σ̃_τ z.
pub fn reverse_step(
    x_tau: &[f64],
    x0_hat: &[f64],
    tau: usize,
    sched: &NoiseSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    let tau = sched.step(tau)?;
    check_len(x_tau.len(), x0_hat.len())?;
    check_len(x_tau.len(), z.len())?;
    let (c_state, c_clean) = reverse_coefficients(tau, sched);
    let sigma = sched.posterior_sigma(tau);
    Ok(x_tau
        .iter()
        .zip(x0_hat)
        .zip(z)
        .map(|((x, x0), zi)| c_state * x + c_clean * x0 + sigma * zi)
        .collect())
}

/// x_{τ−1} = x'_{τ−1} − ζ ∇.
pub fn data_fidelity_step(x_prime: &[f64], grad: &[f64], cfg: &GuidanceConfig) -> Result<Vec<f64>> {
    check_len(x_prime.len(), grad.len())?;
    Ok(x_prime.iter().zip(grad).map(|(x, g)| x - cfg.zeta * g).collect())
}

/// Squared residual ‖y − U f(x̂_0)‖² on the acquired components.
pub fn measurement_loss(y: &SparseMeasurement, y_hat: &[f64]) -> f64 {
    y.indices
        .iter()
        .zip(&y.values)
        .map(|(&i, v)| (v - y_hat[i]).powi(2))
        .sum()
}

/// −2 fᵀ Uᵀ(y − U f(x̂_0)): gradient of the loss with respect to x̂_0.
fn loss_gradient_wrt_denoised(model: &MeasurementModel, y: &SparseMeasurement, y_hat: &[f64]) -> Result<Vec<f64>> {
    let mut r = vec![0.0; model.measurement_dim()];
    for (&i, v) in y.indices.iter().zip(&y.values) {
        r[i] = -2.0 * (v - y_hat[i]);
    }
    model.apply_adjoint(&r)
}

/// Guidance gradient from an already evaluated local posterior and its
/// simulated full measurement `y_hat = f(x̂_0)`.
pub fn guided_gradient_local(
    local: &LocalPosterior,
    alpha_bar: f64,
    model: &MeasurementModel,
    y: &SparseMeasurement,
    y_hat: &[f64],
    mode: GuidanceMode,
) -> Result<Vec<f64>> {
    let d = model.data_dim();
    if y.is_empty() {
        return Ok(vec![0.0; d]);
    }
    let g0 = loss_gradient_wrt_denoised(model, y, y_hat)?;
    match mode {
        GuidanceMode::ExactJacobian => local.jacobian_apply(&g0),
        GuidanceMode::IdentityJacobian => {
            let inv = 1.0 / alpha_bar.sqrt();
            Ok(g0.into_iter().map(|g| g * inv).collect())
        }
        GuidanceMode::FiniteDifferenceOracle => Err(param(
            "finite-difference guidance needs the prior; use guided_gradient",
        )),
    }
}

/// ∇_{x_τ} ‖y − U f(x̂_0(x_τ))‖².
pub fn guided_gradient(
    prior: &IsotropicGmm,
    model: &MeasurementModel,
    y: &SparseMeasurement,
    x_tau: &[f64],
    tau: usize,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>> {
    check_len(model.data_dim(), x_tau.len())?;
    check_len(prior.dim(), x_tau.len())?;
    if y.is_empty() {
        return Ok(vec![0.0; x_tau.len()]);
    }
    let view = noised_view(prior, tau, sched)?;
    if cfg.mode == GuidanceMode::FiniteDifferenceOracle {
        let loss = |x: &[f64]| -> Result<f64> {
            let x0 = view.local(x).denoise()?;
            Ok(measurement_loss(y, &model.apply_forward(&x0)?))
        };
        let h = 1e-5;
        let mut grad = vec![0.0; x_tau.len()];
        let mut probe = x_tau.to_vec();
        for i in 0..x_tau.len() {
            probe[i] = x_tau[i] + h;
            let up = loss(&probe)?;
            probe[i] = x_tau[i] - h;
            let down = loss(&probe)?;
            probe[i] = x_tau[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        return Ok(grad);
    }
    let local = view.local(x_tau);
    let y_hat = model.apply_forward(&local.denoise()?)?;
    guided_gradient_local(&local, view.alpha_bar(), model, y, &y_hat, cfg.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{acquire, build_action_space, ActionKind, ActionSet, DataDomain, ForwardKind};
    use crate::prior::tweedie_denoise;
    use crate::rng;
    use crate::schedule::build_linear_schedule;
    use ndarray::Array2;
    use rand::Rng;

    fn sched() -> NoiseSchedule {
        build_linear_schedule(200, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn first_step_returns_denoised_estimate() {
        let s = sched();
        let x = [0.3, -1.0, 2.0];
        let x0 = [0.1, 0.2, -0.3];
        let out = reverse_step(&x, &x0, 1, &s, &[5.0, -3.0, 1.0]).unwrap();
        for (o, e) in out.iter().zip(x0) {
            assert!((o - e).abs() < 1e-15);
        }
        assert_eq!(reverse_step(&[0.0; 3], &[0.0; 3], 77, &s, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(reverse_step(&x, &x0, 0, &s, &[0.0; 3]).is_err());
    }

    #[test]
    fn coefficients_match_independent_recomputation() {
        let s = sched();
        let mut r = rng::stream(&[12]);
        for _ in 0..50 {
            let tau = r.random_range(2..=200);
            // recompute ᾱ from the raw rates with compensated log-sum
            let log_ab = |t: usize| {
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for b in &s.betas()[..t] {
                    let y = (-b).ln_1p() - comp;
                    let t2 = sum + y;
                    comp = (t2 - sum) - y;
                    sum = t2;
                }
                sum
            };
            let ab = log_ab(tau).exp();
            let abp = log_ab(tau - 1).exp();
            let beta = s.betas()[tau - 1];
            let c1 = (1.0 - beta).sqrt() * (1.0 - abp) / (1.0 - ab);
            let c2 = abp.sqrt() * beta / (1.0 - ab);
            let x = [1.3];
            let x0 = [-0.4];
            let out = reverse_step(&x, &x0, tau, &s, &[0.0]).unwrap()[0];
            let oracle = c1 * 1.3 + c2 * -0.4;
            assert!((out - oracle).abs() < 1e-10, "tau {tau}");
        }
    }

    #[test]
    fn fidelity_step_cases() {
        let g = GuidanceConfig::new(0.0, GuidanceMode::ExactJacobian).unwrap();
        assert_eq!(data_fidelity_step(&[1.0, 2.0], &[3.0, 4.0], &g).unwrap(), vec![1.0, 2.0]);
        let g1 = GuidanceConfig::new(1.0, GuidanceMode::ExactJacobian).unwrap();
        assert_eq!(data_fidelity_step(&[1.0, 2.0], &[0.0, 0.0], &g1).unwrap(), vec![1.0, 2.0]);
        assert_eq!(data_fidelity_step(&[1.0, 2.0], &[3.0, 4.0], &g1).unwrap(), vec![-2.0, -2.0]);
        assert!(GuidanceConfig::new(-1.0, GuidanceMode::ExactJacobian).is_err());
        assert!(GuidanceConfig::new(f64::NAN, GuidanceMode::ExactJacobian).is_err());
    }

    #[test]
    fn standard_normal_prior_full_observation_gradient() {
        let s = sched();
        let space = build_action_space(ActionKind::Pixel, 1, 4).unwrap();
        let model = MeasurementModel::new(ForwardKind::Identity, DataDomain::Real, 0.0, space).unwrap();
        let prior = IsotropicGmm::single(vec![0.0; 4], 1.0).unwrap();
        let truth = [0.2, 0.9, -0.5, 0.1];
        let set = ActionSet::full(model.space());
        let y = acquire(&model, &truth, &set, &mut rng::stream(&[0])).unwrap();
        let x = [0.5, -0.2, 1.0, 0.0];
        let tau = 120;
        let ab = s.alpha_bar(tau);
        let cfg = GuidanceConfig::new(1.0, GuidanceMode::ExactJacobian).unwrap();
        let g = guided_gradient(&prior, &model, &y, &x, tau, &s, &cfg).unwrap();
        for i in 0..4 {
            let expected = -2.0 * ab.sqrt() * (truth[i] - ab.sqrt() * x[i]);
            assert!((g[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn consistent_measurement_gives_zero_gradient() {
        let s = sched();
        let space = build_action_space(ActionKind::Pixel, 2, 2).unwrap();
        let model = MeasurementModel::new(ForwardKind::Identity, DataDomain::Real, 0.0, space).unwrap();
        let prior = IsotropicGmm::single(vec![0.5; 4], 0.1).unwrap();
        let x = [0.1, 0.4, -0.3, 0.8];
        let x0 = tweedie_denoise(&prior, &x, 40, &s).unwrap();
        let set = ActionSet::with_actions(model.space(), &[0, 2]).unwrap();
        let y = acquire(&model, &x0, &set, &mut rng::stream(&[0])).unwrap();
        let cfg = GuidanceConfig::new(1.0, GuidanceMode::ExactJacobian).unwrap();
        let g = guided_gradient(&prior, &model, &y, &x, 40, &s, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
        let empty = SparseMeasurement::default();
        assert_eq!(guided_gradient(&prior, &model, &empty, &x, 40, &s, &cfg).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn exact_gradient_matches_finite_differences_through_dft() {
        let s = sched();
        let space = build_action_space(ActionKind::FourierLine, 4, 4).unwrap();
        let model = MeasurementModel::new(ForwardKind::UnitaryDft2d, DataDomain::Real, 0.05, space).unwrap();
        let mut r = rng::stream(&[21]);
        let means = Array2::from_shape_fn((3, 16), |_| r.random_range(-1.0..1.0));
        let prior = IsotropicGmm::new(vec![0.2, 0.5, 0.3], means, vec![0.1, 0.3, 0.05]).unwrap();
        let truth: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        let set = ActionSet::with_actions(model.space(), &[0, 2]).unwrap();
        let y = acquire(&model, &truth, &set, &mut r).unwrap();
        let x: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        let exact = GuidanceConfig::new(1.0, GuidanceMode::ExactJacobian).unwrap();
        let fd = GuidanceConfig::new(1.0, GuidanceMode::FiniteDifferenceOracle).unwrap();
        let a = guided_gradient(&prior, &model, &y, &x, 60, &s, &exact).unwrap();
        let b = guided_gradient(&prior, &model, &y, &x, 60, &s, &fd).unwrap();
        let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-4 * scale, "{u} vs {v}");
        }
    }
}
