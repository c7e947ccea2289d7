//! Closed-form diffusion kernels.
//!
//! Step indices are 1-based (`1..=T`) everywhere in the public API; `ᾱ₀ = 1`
//! and `φ̃₀ = 0` are implied.

use crate::error::{param_err, Result, WdmError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_1` to `beta_t` inclusive.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 {
            return param_err("schedule needs at least one step");
        }
        if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
            return param_err(format!(
                "betas must satisfy 0 < beta_1 <= beta_T < 1, got {beta_1} and {beta_t}"
            ));
        }
        let betas = if steps == 1 {
            vec![beta_1]
        } else {
            (0..steps)
                .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Linear schedule whose endpoints are rescaled by `1000 / steps`, so a
    /// short chain still ends close to pure noise.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, (1e-4 * scale).min(0.999), (0.02 * scale).min(0.999))
    }

    /// The 1000-step linear schedule with betas 1e-4..0.02.
    pub fn standard_1000() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return param_err("schedule needs at least one step");
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return param_err(format!("beta {b} outside (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
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

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return param_err(format!("step {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱₜ`, with `ᾱ₀ = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior standard deviation `σₜ = √βₜ`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }
}

/// `√ᾱₜ·x0 + √(1−ᾱₜ)·eps`
pub fn forward_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// State of the watermark diffusion process: `γ₁·x_t + (1−γ₁)·b`.
pub fn wdp_state(x_t: &Tensor, trigger: &Tensor, gamma1: f64) -> Result<Tensor> {
    if !(gamma1 > 0.0 && gamma1 <= 1.0) {
        return param_err(format!("gamma1 must lie in (0, 1], got {gamma1}"));
    }
    x_t.axpby(gamma1, trigger, 1.0 - gamma1)
}

/// Per-step drifts `φₜ`, noise scale `η`, and the cumulative drifts `φ̃ₜ` of a
/// diffusion process with a modified Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    phi: Vec<Tensor>,
    eta: f64,
    tilde_phi: Vec<Tensor>,
}

impl MdpConfig {
    /// Builds the config and fills `φ̃ₜ = √αₜ·(φ̃ₜ₋₁ + φₜ)`.
    pub fn new(phi: Vec<Tensor>, eta: f64, sched: &NoiseSchedule) -> Result<Self> {
        if phi.len() != sched.steps() {
            return param_err(format!(
                "{} drift vectors for a {}-step schedule",
                phi.len(),
                sched.steps()
            ));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return param_err(format!("eta must be positive, got {eta}"));
        }
        let shape = phi[0].shape().to_vec();
        let mut tilde_phi = Vec::with_capacity(phi.len() + 1);
        tilde_phi.push(Tensor::zeros(&shape));
        for (i, p) in phi.iter().enumerate() {
            let prev = &tilde_phi[i];
            let next = prev.add(p)?.scale(sched.alphas()[i].sqrt());
            tilde_phi.push(next);
        }
        Ok(MdpConfig { phi, eta, tilde_phi })
    }

    /// `φₜ ≡ 0`, `η = 1`: the standard kernel.
    pub fn standard(shape: &[usize], sched: &NoiseSchedule) -> Self {
        let phi = vec![Tensor::zeros(shape); sched.steps()];
        Self::new(phi, 1.0, sched).expect("standard config")
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn phi(&self, t: usize) -> &Tensor {
        &self.phi[t - 1]
    }

    /// `φ̃ₜ`, with `φ̃₀ = 0`.
    pub fn tilde_phi(&self, t: usize) -> &Tensor {
        &self.tilde_phi[t]
    }

    /// Replaces `η` without touching the drifts.
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// Overrides the cumulative drift at step `t` (used by negative controls).
    pub fn with_tilde_phi(mut self, t: usize, v: Tensor) -> Self {
        self.tilde_phi[t] = v;
        self
    }

    /// `φ̃ₜ` by the explicit sum `Σᵢ √(∏_{j=t+1−i}^{t} αⱼ)·φ_{t+1−i}`.
    pub fn tilde_phi_explicit(&self, t: usize, sched: &NoiseSchedule) -> Tensor {
        let mut acc = Tensor::zeros(self.phi[0].shape());
        let mut prod = 1.0;
        for s in (1..=t).rev() {
            prod *= sched.alpha(s);
            let term = self.phi(s).scale(prod.sqrt());
            acc = acc.add(&term).expect("same shape");
        }
        acc
    }
}

/// The configuration under which the watermark process is an MDP:
/// `φₜ = (1/√αₜ − 1)(1−γ₁)·b`, `η = γ₁`.
pub fn mdp_params_for_wdp(sched: &NoiseSchedule, trigger: &Tensor, gamma1: f64) -> Result<MdpConfig> {
    if !(gamma1 > 0.0 && gamma1 <= 1.0) {
        return param_err(format!("gamma1 must lie in (0, 1], got {gamma1}"));
    }
    let phi = sched
        .alphas()
        .iter()
        .map(|a| trigger.scale((1.0 / a.sqrt() - 1.0) * (1.0 - gamma1)))
        .collect();
    MdpConfig::new(phi, gamma1, sched)
}

fn check_cfg_shape(x: &Tensor, cfg: &MdpConfig) -> Result<()> {
    if x.shape() != cfg.phi[0].shape() {
        return Err(WdmError::Dimension(format!(
            "state shape {:?} does not match drift shape {:?}",
            x.shape(),
            cfg.phi[0].shape()
        )));
    }
    Ok(())
}

/// One step of the modified kernel: `√αₜ·(x_prev + φₜ) + η·√(1−αₜ)·eps`.
pub fn mdp_forward_step(
    x_prev: &Tensor,
    t: usize,
    cfg: &MdpConfig,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<Tensor> {
    sched.check_step(t)?;
    check_cfg_shape(x_prev, cfg)?;
    let a = sched.alpha(t);
    x_prev
        .add(cfg.phi(t))?
        .axpby(a.sqrt(), eps, cfg.eta * (1.0 - a).sqrt())
}

/// Closed-form marginal: `√ᾱₜ·x0 + φ̃ₜ + η·√(1−ᾱₜ)·eps`.
pub fn mdp_composed_sample(
    x0: &Tensor,
    t: usize,
    cfg: &MdpConfig,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<Tensor> {
    sched.check_step(t)?;
    check_cfg_shape(x0, cfg)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, cfg.eta * (1.0 - ab).sqrt())?
        .add(cfg.tilde_phi(t))
}

/// Ancestral step: `(1/√αₜ)(x_t − (1−αₜ)/√(1−ᾱₜ)·eps_pred) + σₜ·z`.
///
/// `z` must be exactly zero at `t = 1`.
pub fn reverse_step(
    x_t: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    z: &Tensor,
) -> Result<Tensor> {
    sched.check_step(t)?;
    x_t.check_same_shape(eps_pred)?;
    x_t.check_same_shape(z)?;
    if t == 1 && z.data().iter().any(|v| *v != 0.0) {
        return param_err("reverse noise must be zero at the final step");
    }
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    let s = sched.sigma(t);
    let data = x_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .zip(z.data())
        .map(|((x, e), zz)| inv * (x - coef * e) + s * zz)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Mean, variance and the constant `Cₜ` of `q(x_{t−1} | x_t, x_0)` under an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Tensor,
    pub var: f64,
}

pub fn mdp_posterior(
    x_t: &Tensor,
    x0: &Tensor,
    t: usize,
    cfg: &MdpConfig,
    sched: &NoiseSchedule,
) -> Result<Posterior> {
    if t < 2 {
        return param_err(format!("posterior needs t >= 2, got {t}"));
    }
    sched.check_step(t)?;
    check_cfg_shape(x_t, cfg)?;
    x_t.check_same_shape(x0)?;
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    let var = cfg.eta * cfg.eta * (1.0 - ab_prev) * (1.0 - a) / denom;
    let c_xt = a.sqrt() * (1.0 - ab_prev) / denom;
    let c_x0 = ab_prev.sqrt() * (1.0 - a) / denom;
    let c_phi = (ab - a) / denom;
    let c_tphi = (1.0 - a) / denom;
    let phi = cfg.phi(t).data();
    let tphi = cfg.tilde_phi(t - 1).data();
    let mean = (0..x_t.len())
        .map(|i| c_xt * x_t.data()[i] + c_x0 * x0.data()[i] + c_phi * phi[i] + c_tphi * tphi[i])
        .collect();
    Ok(Posterior {
        mean: Tensor::new(x_t.shape().to_vec(), mean)?,
        var,
    })
}

/// The constant `Cₜ` left over when `x0` is eliminated from the posterior mean
/// in favour of the noise:
/// `Cₜ = ((ᾱₜ−αₜ)φₜ + (1−αₜ)φ̃ₜ₋₁ − (1−αₜ)/√αₜ·φ̃ₜ) / (1−ᾱₜ)`.
pub fn posterior_constant(t: usize, cfg: &MdpConfig, sched: &NoiseSchedule) -> Result<Tensor> {
    if t < 2 {
        return param_err(format!("posterior needs t >= 2, got {t}"));
    }
    sched.check_step(t)?;
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let denom = 1.0 - ab;
    let phi = cfg.phi(t);
    let prev = cfg.tilde_phi(t - 1);
    let cur = cfg.tilde_phi(t);
    let data = (0..phi.len())
        .map(|i| {
            ((ab - a) * phi.data()[i] + (1.0 - a) * prev.data()[i]
                - (1.0 - a) / a.sqrt() * cur.data()[i])
                / denom
        })
        .collect();
    Tensor::new(phi.shape().to_vec(), data)
}

/// Posterior mean written in terms of the noise:
/// `(1/√αₜ)(x_t − η(1−αₜ)/√(1−ᾱₜ)·eps) + Cₜ`.
pub fn mdp_posterior_mean_from_noise(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    cfg: &MdpConfig,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let c = posterior_constant(t, cfg, sched)?;
    let a = sched.alpha(t);
    let k = cfg.eta * (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    x_t.axpby(1.0 / a.sqrt(), eps, -k / a.sqrt())?.add(&c)
}

/// Solves the standard marginal for its noise: `(x_t − √ᾱₜ·x0)/√(1−ᾱₜ)`.
pub fn noise_from_forward(x0: &Tensor, x_t: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return param_err("alpha_bar = 1 leaves the noise undetermined");
    }
    x_t.axpby(1.0 / (1.0 - ab).sqrt(), x0, -ab.sqrt() / (1.0 - ab).sqrt())
}

/// Solves the MDP marginal for its noise: `(x_t − √ᾱₜ·x0 − φ̃ₜ)/(η√(1−ᾱₜ))`.
pub fn noise_from_mdp(
    x0: &Tensor,
    x_t: &Tensor,
    t: usize,
    cfg: &MdpConfig,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    check_cfg_shape(x0, cfg)?;
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return param_err("alpha_bar = 1 leaves the noise undetermined");
    }
    let s = cfg.eta * (1.0 - ab).sqrt();
    x_t.sub(cfg.tilde_phi(t))?
        .axpby(1.0 / s, x0, -ab.sqrt() / s)
}
