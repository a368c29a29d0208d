use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{soft_update, update_actor, update_critic, AgentNets, Checkpoint, TrainMode};
use super::buffer::ReplayBuffer;
use super::noise::OuNoise;
use super::rollout::{run_episode, NoiseSource, RolloutPlan};
use crate::adversary::{
    estimate_radius, grad_loss_wrt_omega, loss_from_trajectory, pga_update, AdversaryState, AmbiguityBall,
    NoisePrior,
};
use crate::config::{OmegaInit, RadiusSource, RunConfig};
use crate::envs::Trajectory;
use crate::error::{DsrlError, Result};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Init = 1,
    Exploration = 2,
    Dynamics = 3,
    Minibatch = 4,
    Adversary = 5,
    Radius = 6,
}

pub fn rng_stream(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Ball centered at the prior mean with the configured or estimated radius.
pub fn ambiguity_ball(cfg: &RunConfig, prior: &NoisePrior) -> Result<AmbiguityBall> {
    let radius = match cfg.ambiguity.source {
        RadiusSource::Direct => cfg.ambiguity.rho_d,
        RadiusSource::MonteCarlo => {
            let mut rng = rng_stream(cfg.seed, RngStream::Radius);
            let samples: Vec<Vec<f64>> =
                (0..cfg.ambiguity.estimator_samples).map(|_| prior.sample(&mut rng)).collect();
            estimate_radius(&samples, cfg.ambiguity.wasserstein_rho)?
        }
    };
    AmbiguityBall::new(prior.mean(), radius)
}

/// One JSONL record per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Discounted loss `L` of the episode.
    pub loss: f64,
    pub min_h: f64,
    /// ω used during the episode (before its end-of-episode update).
    pub omega: Vec<f64>,
    pub omega_distance: f64,
    pub steps: usize,
    pub reached_goal: bool,
    pub qp_fallbacks: usize,
    pub jacobian_failures: usize,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: AgentNets,
    pub adversary: AdversaryState,
    pub ball: AmbiguityBall,
    pub metrics: Vec<EpisodeMetrics>,
    /// Set when an unrecoverable numeric failure stopped training early.
    pub failure: Option<DsrlError>,
}

impl Checkpoint {
    pub fn capture(
        cfg: &RunConfig,
        mode: TrainMode,
        episode: usize,
        nets: &AgentNets,
        adversary: &AdversaryState,
        ball: &AmbiguityBall,
    ) -> Checkpoint {
        Checkpoint {
            env: cfg.env,
            mode,
            episode,
            actor: nets.actor.clone(),
            critic: nets.critic.clone(),
            target_actor: nets.target_actor.clone(),
            target_critic: nets.target_critic.clone(),
            omega: adversary.omega.clone(),
            omega_center: ball.center.clone(),
        }
    }
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &RunConfig, mode: TrainMode) -> Checkpoint {
        Checkpoint::capture(cfg, mode, self.metrics.len(), &self.nets, &self.adversary, &self.ball)
    }
}

/// Per-episode observer: metrics, the rollout, and the state after the
/// end-of-episode adversary update.
pub type EpisodeHook<'a> = dyn FnMut(&EpisodeMetrics, &Trajectory, &AgentNets, &AdversaryState) -> Result<()> + 'a;

/// Trains for `cfg.episodes` episodes.
///
/// Invalid configuration is an error; numeric failures stop training and are
/// reported in [`TrainOutcome::failure`] together with the state reached.
pub fn train(cfg: &RunConfig, mode: TrainMode, on_episode: &mut EpisodeHook<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.env_model()?;
    let (n, m) = (model.n(), model.m());
    let prior = NoisePrior::from_config(&cfg.noise)?;
    let ball = ambiguity_ball(cfg, &prior)?;
    let barriers = model.barriers(cfg.cbf.kappa1, cfg.cbf.kappa2);

    let mut init_rng = rng_stream(cfg.seed, RngStream::Init);
    let mut explore_rng = rng_stream(cfg.seed, RngStream::Exploration);
    let mut noise_rng = rng_stream(cfg.seed, RngStream::Dynamics);
    let mut batch_rng = rng_stream(cfg.seed, RngStream::Minibatch);
    let mut adv_rng = rng_stream(cfg.seed, RngStream::Adversary);

    let mut nets = AgentNets::new(n, &model.u_lo, &model.u_hi, &cfg.ddpg, &mut init_rng)?;
    let omega0 = match (mode, cfg.adversary.omega_init) {
        (TrainMode::Dsrl, OmegaInit::Random) => ball.random_point(&mut adv_rng),
        _ => ball.center.clone(),
    };
    let mut adversary = AdversaryState::new(omega0, cfg.adversary.step_size, cfg.adversary.decay)?;
    let mut buffer = ReplayBuffer::new(cfg.ddpg.buffer_capacity)?;
    let mut exploration = OuNoise::new(m, cfg.ddpg.ou_theta, cfg.ddpg.ou_sigma)?;
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut failure = None;

    for episode in 0..cfg.episodes {
        let shift: Vec<f64> = match mode {
            TrainMode::Dsrl => adversary.omega.iter().zip(&ball.center).map(|(w, c)| w - c).collect(),
            TrainMode::Baseline => vec![0.0; n],
        };
        let plan = RolloutPlan {
            model: &model,
            barriers: &barriers,
            prior: &prior,
            samples_per_step: cfg.noise.samples_per_step,
            assembly: NoiseSource::Sampled { shift: shift.clone() },
            executed: NoiseSource::Sampled { shift },
            record_jacobians: mode == TrainMode::Dsrl,
        };
        let (mut critic_sum, mut actor_sum, mut updates) = (0.0, 0.0, 0usize);
        let batch_size = cfg.ddpg.batch_size;
        let (actor_lr, critic_lr) = (cfg.ddpg.actor_lr, cfg.ddpg.critic_lr);
        let reward_scale = cfg.ddpg.reward_scale;
        let mut hook = |nets: &mut AgentNets, t: &super::Transition| -> Result<()> {
            buffer.push(super::Transition { r: reward_scale * t.r, ..t.clone() });
            if buffer.len() >= batch_size {
                let batch = buffer.sample(batch_size, &mut batch_rng)?;
                critic_sum += update_critic(nets, &batch, critic_lr)?;
                actor_sum += update_actor(nets, &batch, actor_lr)?;
                soft_update(nets)?;
                updates += 1;
            }
            Ok(())
        };
        let rollout = run_episode(&mut nets, &plan, &mut exploration, &mut explore_rng, &mut noise_rng, &mut hook);
        let traj = match rollout {
            Ok((traj, _)) => traj,
            Err(e) => {
                log::error!("training stopped in episode {episode}: {e}");
                failure = Some(e);
                break;
            }
        };

        let loss = loss_from_trajectory(&traj, cfg.ddpg.gamma);
        let record = EpisodeMetrics {
            episode,
            episode_return: traj.undiscounted_return(),
            loss,
            min_h: traj.min_h(),
            omega: adversary.omega.clone(),
            omega_distance: ball.distance_from_center(&adversary.omega),
            steps: traj.len(),
            reached_goal: traj.reached_goal,
            qp_fallbacks: traj.qp_fallbacks,
            jacobian_failures: traj.jacobian_failures,
            critic_loss: (updates > 0).then(|| critic_sum / updates as f64),
            actor_objective: (updates > 0).then(|| actor_sum / updates as f64),
            aborted: traj.aborted.clone(),
        };
        if mode == TrainMode::Dsrl && !traj.is_empty() {
            let step = grad_loss_wrt_omega(&traj, &model, cfg.ddpg.gamma)
                .and_then(|grad| pga_update(&mut adversary, &grad, &ball));
            if let Err(e) = step {
                log::warn!("adversary update skipped in episode {episode}: {e}");
            }
        }
        on_episode(&record, &traj, &nets, &adversary)?;
        metrics.push(record);
    }
    Ok(TrainOutcome { nets, adversary, ball, metrics, failure })
}
