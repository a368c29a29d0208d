//! Actor-critic learning with the safety filter in the action path.

mod agent;
mod buffer;
mod noise;
mod rollout;
mod train;

pub use agent::{critic_target, soft_update, update_actor, update_critic, AgentNets, Checkpoint, TrainMode};
pub use buffer::{ReplayBuffer, Transition};
pub use noise::OuNoise;
pub use rollout::{run_episode, select_action, NoiseSource, RolloutPlan};
pub use train::{ambiguity_ball, rng_stream, train, EpisodeMetrics, RngStream, TrainOutcome};
