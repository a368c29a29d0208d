//! Run configuration.
//!
//! A user TOML file only needs the keys it wants to change: it is merged over
//! the defaults of the selected environment before validation. The resolved
//! configuration serializes back to a TOML document that loads to the same
//! value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvModel, Geometry, RewardParams};
use crate::error::{DsrlError, Result};
use crate::net::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    /// Training episodes `M`.
    pub episodes: usize,
    /// Checkpoint and trajectory export interval in episodes; 0 disables.
    pub checkpoint_every: usize,
    pub output_dir: String,
    pub environment: EnvConfig,
    pub noise: NoiseConfig,
    pub ambiguity: AmbiguityConfig,
    pub cbf: CbfConfig,
    pub ddpg: DdpgConfig,
    pub adversary: AdversaryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle_center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle_radius: Option<f64>,
    /// Glide-slope half angle in degrees (quadcopter only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glide_slope_deg: Option<f64>,
    pub reward_d: f64,
    pub reward_s: f64,
    pub reward_b: f64,
    pub goal_tolerance: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent Gaussian channels with the given mean and std.
    Gaussian,
    /// Independent uniform channels on `[lo, hi]`.
    Uniform,
}

/// Prior `p₀(ω)` of the additive dynamics noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Gaussian mean; unused by the uniform prior, whose mean is the box center.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    /// Draws per step for the sample-average safety row.
    pub samples_per_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSource {
    /// Use `rho_d` as given.
    Direct,
    /// `rho_d = wasserstein_rho + mean‖ω₀ − mean(ω₀)‖` over prior draws.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub source: RadiusSource,
    pub rho_d: f64,
    pub wasserstein_rho: f64,
    pub estimator_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfConfig {
    pub kappa1: f64,
    pub kappa2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// Critic sees the executed (rectified) action.
    Rectified,
    /// Critic sees the raw actor action.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
    pub critic_action_source: ActionSource,
    /// Uniform scale of the final-layer initialization.
    pub final_layer_init: f64,
    /// Multiplies rewards stored in the replay buffer; reported returns are unscaled.
    pub reward_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaInit {
    /// Start at the ball center.
    Center,
    /// Start at a uniform random point of the ball.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub step_size: f64,
    /// Multiplicative step decay per episode.
    pub decay: f64,
    pub omega_init: OmegaInit,
}

impl RunConfig {
    /// Built-in defaults for an environment.
    pub fn default_for(kind: EnvKind) -> RunConfig {
        let n = kind.state_dim();
        let environment = match kind {
            EnvKind::Dubins1 => EnvConfig {
                dt: 0.05,
                horizon: 200,
                u_lo: vec![-1.0; 3],
                u_hi: vec![1.0; 3],
                x0: vec![0.0, 0.0, 0.0],
                xf: vec![5.0, 0.0, 0.0],
                obstacle_center: Some([2.5, 0.15]),
                obstacle_radius: Some(1.0),
                glide_slope_deg: None,
                reward_d: 0.1,
                reward_s: 0.1,
                reward_b: 0.0,
                goal_tolerance: 0.1,
                gravity: 9.81,
            },
            EnvKind::Dubins2 => EnvConfig {
                dt: 0.05,
                horizon: 200,
                u_lo: vec![-2.0; 3],
                u_hi: vec![2.0; 3],
                x0: vec![0.0; 6],
                xf: vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                obstacle_center: Some([2.5, 0.15]),
                obstacle_radius: Some(1.0),
                glide_slope_deg: None,
                reward_d: 0.1,
                reward_s: 0.1,
                reward_b: 0.1,
                goal_tolerance: 0.1,
                gravity: 9.81,
            },
            EnvKind::Quad => EnvConfig {
                dt: 0.05,
                horizon: 300,
                u_lo: vec![-1.5; 3],
                u_hi: vec![1.5; 3],
                x0: vec![2.5, 1.0, 3.5],
                xf: vec![0.0; 3],
                obstacle_center: None,
                obstacle_radius: None,
                glide_slope_deg: Some(45.0),
                reward_d: 1.0,
                reward_s: 0.0,
                reward_b: 0.0,
                goal_tolerance: 0.1,
                gravity: 9.81,
            },
        };
        RunConfig {
            env: kind,
            seed: 0,
            episodes: 300,
            checkpoint_every: 50,
            output_dir: format!("runs/{}", kind.name()),
            environment,
            noise: NoiseConfig {
                kind: NoiseKind::Gaussian,
                mean: vec![0.0; n],
                std: vec![0.1; n],
                lo: None,
                hi: None,
                samples_per_step: 8,
            },
            ambiguity: AmbiguityConfig {
                source: RadiusSource::Direct,
                rho_d: 0.3,
                wasserstein_rho: 0.1,
                estimator_samples: 1000,
            },
            cbf: CbfConfig { kappa1: 1.0, kappa2: 1.0 },
            ddpg: DdpgConfig {
                gamma: 0.99,
                tau: 0.005,
                batch_size: 64,
                buffer_capacity: 100_000,
                actor_lr: 1e-4,
                critic_lr: 1e-3,
                ou_theta: 0.15,
                ou_sigma: 0.2,
                actor_hidden: vec![64, 64],
                critic_hidden: vec![64, 64],
                actor_activation: Activation::Tanh,
                critic_activation: Activation::Relu,
                critic_action_source: ActionSource::Rectified,
                final_layer_init: 3e-3,
                reward_scale: match kind {
                    EnvKind::Dubins2 => 0.01,
                    _ => 1.0,
                },
            },
            adversary: AdversaryConfig { step_size: 0.01, decay: 0.999, omega_init: OmegaInit::Center },
        }
    }

    /// Parses a user document, fills unspecified keys from the environment
    /// defaults, and validates the result.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| DsrlError::config("<document>", e.message()))?;
        let kind = match user.get("env") {
            Some(v) => EnvKind::deserialize(v.clone())
                .map_err(|_| DsrlError::config("env", "expected one of dubins1, dubins2, quad"))?,
            None => return Err(DsrlError::config("env", "missing environment tag")),
        };
        if kind == EnvKind::Quad {
            let has_slope = user
                .get("environment")
                .and_then(|e| e.get("glide_slope_deg"))
                .is_some();
            if !has_slope {
                return Err(DsrlError::config("environment.glide_slope_deg", "required for the quad environment"));
            }
        }
        let defaults = toml::Table::try_from(RunConfig::default_for(kind))
            .map_err(|e| DsrlError::Parse(e.to_string()))?;
        let mut merged = toml::Value::Table(defaults);
        merge(&mut merged, toml::Value::Table(user));
        let config = RunConfig::deserialize(merged).map_err(|e| DsrlError::config("<document>", e.message()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DsrlError::config("--config", format!("{}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DsrlError::Parse(e.to_string()))
    }

    pub fn env_model(&self) -> Result<EnvModel> {
        let e = &self.environment;
        let geometry = match self.env {
            EnvKind::Quad => Geometry::GlideSlope {
                half_angle_deg: e
                    .glide_slope_deg
                    .ok_or_else(|| DsrlError::config("environment.glide_slope_deg", "required for quad"))?,
            },
            _ => Geometry::Obstacle {
                center: e
                    .obstacle_center
                    .ok_or_else(|| DsrlError::config("environment.obstacle_center", "required for dubins cars"))?,
                radius: e
                    .obstacle_radius
                    .ok_or_else(|| DsrlError::config("environment.obstacle_radius", "required for dubins cars"))?,
            },
        };
        let model = EnvModel {
            kind: self.env,
            dt: e.dt,
            horizon: e.horizon,
            u_lo: e.u_lo.clone(),
            u_hi: e.u_hi.clone(),
            x0: e.x0.clone(),
            xf: e.xf.clone(),
            reward: RewardParams { d: e.reward_d, s: e.reward_s, b: e.reward_b },
            goal_tolerance: e.goal_tolerance,
            geometry,
            gravity: e.gravity,
        };
        model.validate().map_err(|err| match err {
            DsrlError::Config { field, message } => {
                DsrlError::Config { field: field.replacen("env.", "environment.", 1), message }
            }
            other => other,
        })?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.env.state_dim();
        self.env_model()?;
        let nz = &self.noise;
        if nz.mean.len() != n || nz.mean.iter().any(|v| !v.is_finite()) {
            return Err(DsrlError::config("noise.mean", format!("expected {n} finite entries")));
        }
        match nz.kind {
            NoiseKind::Gaussian => {
                if nz.std.len() != n || nz.std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(DsrlError::config("noise.std", format!("expected {n} nonnegative entries")));
                }
            }
            NoiseKind::Uniform => {
                let (Some(lo), Some(hi)) = (&nz.lo, &nz.hi) else {
                    return Err(DsrlError::config("noise.lo/hi", "uniform noise needs both bounds"));
                };
                if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
                    return Err(DsrlError::config("noise.lo/hi", "bounds must be finite with lo < hi"));
                }
            }
        }
        if nz.samples_per_step == 0 {
            return Err(DsrlError::config("noise.samples_per_step", "must be at least 1"));
        }
        let a = &self.ambiguity;
        match a.source {
            RadiusSource::Direct if !(a.rho_d > 0.0 && a.rho_d.is_finite()) => {
                return Err(DsrlError::config("ambiguity.rho_d", "must be positive"));
            }
            RadiusSource::MonteCarlo if !(a.wasserstein_rho >= 0.0 && a.estimator_samples >= 2) => {
                return Err(DsrlError::config(
                    "ambiguity.wasserstein_rho",
                    "needs wasserstein_rho ≥ 0 and estimator_samples ≥ 2",
                ));
            }
            _ => {}
        }
        if !(self.cbf.kappa1 > 0.0 && self.cbf.kappa1.is_finite()) {
            return Err(DsrlError::config("cbf.kappa1", "must be positive"));
        }
        if !(self.cbf.kappa2 > 0.0 && self.cbf.kappa2.is_finite()) {
            return Err(DsrlError::config("cbf.kappa2", "must be positive"));
        }
        let d = &self.ddpg;
        let checks: [(&str, bool); 10] = [
            ("ddpg.gamma", d.gamma > 0.0 && d.gamma <= 1.0),
            ("ddpg.tau", d.tau > 0.0 && d.tau <= 1.0),
            ("ddpg.batch_size", d.batch_size >= 1),
            ("ddpg.buffer_capacity", d.buffer_capacity >= 1),
            ("ddpg.actor_lr", d.actor_lr > 0.0),
            ("ddpg.critic_lr", d.critic_lr > 0.0),
            ("ddpg.ou_theta", d.ou_theta >= 0.0 && d.ou_theta.is_finite()),
            ("ddpg.ou_sigma", d.ou_sigma >= 0.0 && d.ou_sigma.is_finite()),
            ("ddpg.final_layer_init", d.final_layer_init > 0.0),
            ("ddpg.reward_scale", d.reward_scale > 0.0 && d.reward_scale.is_finite()),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(DsrlError::config(field, "out of range"));
            }
        }
        if d.actor_hidden.iter().chain(&d.critic_hidden).any(|&w| w == 0) {
            return Err(DsrlError::config("ddpg.actor_hidden/critic_hidden", "layer widths must be positive"));
        }
        if !(self.adversary.step_size > 0.0) {
            return Err(DsrlError::config("adversary.step_size", "must be positive"));
        }
        if !(self.adversary.decay > 0.0 && self.adversary.decay <= 1.0) {
            return Err(DsrlError::config("adversary.decay", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
