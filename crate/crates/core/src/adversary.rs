//! Worst-case noise adversary.
//!
//! The adversary holds one constant perturbation `ω` inside the Euclidean
//! ball `B = {ω : ‖ω − 𝔼ω₀‖ ≤ ρ_d}`. After each episode it differentiates the
//! discounted loss `L = −Σ_{k≥1} γ^k R_k` with respect to `ω` through the
//! recorded rollout and the safety-QP sensitivities, then takes one projected
//! gradient ascent step.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cbf::mean_vector;
use crate::config::{NoiseConfig, NoiseKind};
use crate::envs::{EnvModel, Trajectory};
use crate::error::{DsrlError, Result};

/// Ambiguity ball under the 2-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl AmbiguityBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DsrlError::Argument(format!("ball radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(DsrlError::non_finite("ball center"));
        }
        Ok(AmbiguityBall { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn distance_from_center(&self, omega: &[f64]) -> f64 {
        omega.iter().zip(&self.center).map(|(w, c)| (w - c).powi(2)).sum::<f64>().sqrt()
    }

    /// Uniform draw from the ball.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = self.radius * rng.gen::<f64>().powf(1.0 / n as f64);
        self.center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
    }
}

/// `c + ρ (ω̄ − c) / max(ρ, ‖ω̄ − c‖)`.
pub fn project(omega_bar: &[f64], ball: &AmbiguityBall) -> Vec<f64> {
    let dist = ball.distance_from_center(omega_bar);
    if dist <= ball.radius {
        return omega_bar.to_vec();
    }
    let scale = ball.radius / dist;
    omega_bar.iter().zip(&ball.center).map(|(w, c)| c + scale * (w - c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryState {
    pub omega: Vec<f64>,
    pub step_size: f64,
    /// Applied to `step_size` after every update.
    pub decay: f64,
    pub iteration: usize,
}

impl AdversaryState {
    pub fn new(omega: Vec<f64>, step_size: f64, decay: f64) -> Result<Self> {
        if !(step_size > 0.0) || !(decay > 0.0 && decay <= 1.0) {
            return Err(DsrlError::Argument("adversary step must be positive and decay in (0, 1]".into()));
        }
        Ok(AdversaryState { omega, step_size, decay, iteration: 0 })
    }
}

/// `ω ← Proj_B(ω + α ∂L/∂ω)`. A non-finite gradient leaves the state untouched.
pub fn pga_update(state: &mut AdversaryState, grad: &[f64], ball: &AmbiguityBall) -> Result<()> {
    if grad.len() != state.omega.len() || ball.dim() != state.omega.len() {
        return Err(DsrlError::Shape("gradient, ω and ball dimensions differ".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DsrlError::non_finite("adversary gradient"));
    }
    let stepped: Vec<f64> = state.omega.iter().zip(grad).map(|(w, g)| w + state.step_size * g).collect();
    state.omega = project(&stepped, ball);
    state.iteration += 1;
    state.step_size *= state.decay;
    Ok(())
}

/// `−Σ_{k=1}^{T} γ^k R_k`, with `rewards[0]` as `R_1`.
pub fn loss_from_rewards(rewards: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut loss = 0.0;
    for r in rewards {
        weight *= gamma;
        loss -= weight * r;
    }
    loss
}

pub fn loss_from_trajectory(traj: &Trajectory, gamma: f64) -> f64 {
    loss_from_rewards(&traj.rewards, gamma)
}

/// Open-loop adjoint of the recorded rollout.
///
/// Actions are held at their recorded values except for their dependence on
/// `ω` through the safety QP (`du_domega`); the noise executed in every step
/// moves one-for-one with `ω`.
pub fn grad_loss_wrt_omega(traj: &Trajectory, model: &EnvModel, gamma: f64) -> Result<Vec<f64>> {
    let steps = traj.len();
    let n = model.n();
    if traj.du_domega.len() != steps {
        return Err(DsrlError::Argument(format!(
            "trajectory has {} QP Jacobians for {steps} steps",
            traj.du_domega.len()
        )));
    }
    if traj.states.len() != steps + 1 || traj.actions_rect.len() != steps || traj.executed_noise.len() != steps {
        return Err(DsrlError::Shape("trajectory sequences have inconsistent lengths".into()));
    }
    let mut weights = Vec::with_capacity(steps);
    let mut w = 1.0;
    for _ in 0..steps {
        w *= gamma;
        weights.push(w);
    }
    // adjoint = ∂L/∂x_{k+1}
    let mut adjoint = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for k in (0..steps).rev() {
        let (x, u) = (&traj.states[k], &traj.actions_rect[k]);
        let (rx, ru) = model.reward_grads(&traj.states[k + 1], u);
        for (a, r) in adjoint.iter_mut().zip(&rx) {
            *a -= weights[k] * r;
        }
        let jac = model.step_grads(x, u, &traj.executed_noise[k])?;
        let mut dl_du = jac.wrt_control.tr_matvec(&adjoint)?;
        for (d, r) in dl_du.iter_mut().zip(&ru) {
            *d -= weights[k] * r;
        }
        let through_qp = traj.du_domega[k].tr_matvec(&dl_du)?;
        let direct = jac.wrt_noise.tr_matvec(&adjoint)?;
        for i in 0..n {
            grad[i] += through_qp[i] + direct[i];
        }
        adjoint = jac.wrt_state.tr_matvec(&adjoint)?;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DsrlError::non_finite("loss gradient"));
    }
    Ok(grad)
}

/// `ρ + mean‖ω₀ − mean(ω₀)‖` over prior draws.
///
/// A sample-spread heuristic standing in for the Monte-Carlo evaluation of
/// the dual radius; `ρ_d` can also be configured directly.
pub fn estimate_radius(samples: &[Vec<f64>], wasserstein_rho: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(DsrlError::Argument("radius estimate needs at least two samples".into()));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(DsrlError::Shape("samples differ in length".into()));
    }
    let mean = mean_vector(samples);
    let spread = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / samples.len() as f64;
    Ok(wasserstein_rho + spread)
}

/// The prior `p₀(ω)` with independent channels.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePrior {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl NoisePrior {
    pub fn from_config(cfg: &NoiseConfig) -> Result<Self> {
        match cfg.kind {
            NoiseKind::Gaussian => Ok(NoisePrior::Gaussian { mean: cfg.mean.clone(), std: cfg.std.clone() }),
            NoiseKind::Uniform => match (&cfg.lo, &cfg.hi) {
                (Some(lo), Some(hi)) => Ok(NoisePrior::Uniform { lo: lo.clone(), hi: hi.clone() }),
                _ => Err(DsrlError::config("noise.lo/hi", "uniform noise needs both bounds")),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoisePrior::Gaussian { mean, .. } => mean.len(),
            NoisePrior::Uniform { lo, .. } => lo.len(),
        }
    }

    /// Analytic `𝔼ω₀`.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            NoisePrior::Gaussian { mean, .. } => mean.clone(),
            NoisePrior::Uniform { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            NoisePrior::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(&m, &s)| if s > 0.0 { Normal::new(m, s).expect("validated std").sample(rng) } else { m })
                .collect(),
            NoisePrior::Uniform { lo, hi } => lo.iter().zip(hi).map(|(&l, &h)| rng.gen_range(l..h)).collect(),
        }
    }
}
