use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::Transition;
use crate::config::{ActionSource, DdpgConfig};
use crate::envs::EnvKind;
use crate::error::{DsrlError, Result};
use crate::net::{Adam, AdamState, Matrix, MlpParams, OutputActivation};

/// Live and target actor/critic with their optimizer state.
#[derive(Debug, Clone)]
pub struct AgentNets {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub target_actor: MlpParams,
    pub target_critic: MlpParams,
    pub tau: f64,
    pub gamma: f64,
    pub action_source: ActionSource,
    pub adam: Adam,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl AgentNets {
    /// Actor `[n, hidden.., m]` with a bounded head, critic `[n+m, hidden.., 1]`;
    /// targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        lo: &[f64],
        hi: &[f64],
        cfg: &DdpgConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let m = lo.len();
        let sizes = |input: usize, hidden: &[usize], out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = MlpParams::init(
            &sizes(n, &cfg.actor_hidden, m),
            cfg.actor_activation,
            OutputActivation::ScaledTanh { lower: lo.to_vec(), upper: hi.to_vec() },
            cfg.final_layer_init,
            rng,
        )?;
        let critic = MlpParams::init(
            &sizes(n + m, &cfg.critic_hidden, 1),
            cfg.critic_activation,
            OutputActivation::Identity,
            cfg.final_layer_init,
            rng,
        )?;
        Ok(Self::from_parts(actor, critic, cfg))
    }

    pub fn from_parts(actor: MlpParams, critic: MlpParams, cfg: &DdpgConfig) -> Self {
        AgentNets {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            tau: cfg.tau,
            gamma: cfg.gamma,
            action_source: cfg.critic_action_source,
            adam: Adam::default(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_size()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_size()
    }

    fn critic_action<'a>(&self, t: &'a Transition) -> &'a [f64] {
        match self.action_source {
            ActionSource::Rectified => &t.a_r,
            ActionSource::Raw => &t.a,
        }
    }
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = (&'a [f64], &'a [f64])>, width: usize) -> Matrix {
    let count = rows.len();
    let mut data = Vec::with_capacity(count * width);
    for (a, b) in rows {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Matrix::from_vec(count, width, data).expect("rows sized by caller")
}

fn concat_rows(left: &Matrix, right: &Matrix) -> Matrix {
    let width = left.cols() + right.cols();
    stack((0..left.rows()).map(|i| (left.row(i), right.row(i))), width)
}

/// `y = R + γ Q′(s′, μ′(s′))`, or `y = R` at a terminal transition.
pub fn critic_target(nets: &AgentNets, t: &Transition) -> Result<f64> {
    Ok(critic_targets(nets, &[t])?[0])
}

fn critic_targets(nets: &AgentNets, batch: &[&Transition]) -> Result<Vec<f64>> {
    let n = nets.state_dim();
    let next = stack(batch.iter().map(|t| (t.s_next.as_slice(), &[][..])), n);
    let (a_next, _) = nets.target_actor.forward_batch(&next)?;
    let (q_next, _) = nets.target_critic.forward_batch(&concat_rows(&next, &a_next))?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| if t.done { t.r } else { t.r + nets.gamma * q_next[(i, 0)] })
        .collect())
}

/// One Adam step on the mean squared Bellman error; returns the loss before
/// the step.
pub fn update_critic(nets: &mut AgentNets, batch: &[&Transition], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(DsrlError::Argument("empty minibatch".into()));
    }
    let y = critic_targets(nets, batch)?;
    let (n, m) = (nets.state_dim(), nets.action_dim());
    let inputs = stack(batch.iter().map(|t| (t.s.as_slice(), nets.critic_action(t))), n + m);
    let (q, cache) = nets.critic.forward_batch(&inputs)?;
    let count = batch.len() as f64;
    let mut upstream = Matrix::zeros(batch.len(), 1);
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let err = q[(i, 0)] - y[i];
        loss += err * err / count;
        upstream[(i, 0)] = 2.0 * err / count;
    }
    if !loss.is_finite() {
        return Err(DsrlError::non_finite("critic loss"));
    }
    let grads = nets.critic.backward_batch(&cache, &upstream)?;
    let adam = nets.adam;
    adam.step(&mut nets.critic, &grads, &mut nets.critic_opt, lr)?;
    Ok(loss)
}

/// Deterministic policy gradient ascent on `mean Q(s, μ(s))`; returns the
/// objective before the step.
pub fn update_actor(nets: &mut AgentNets, batch: &[&Transition], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(DsrlError::Argument("empty minibatch".into()));
    }
    let (n, m) = (nets.state_dim(), nets.action_dim());
    let states = stack(batch.iter().map(|t| (t.s.as_slice(), &[][..])), n);
    let (actions, actor_cache) = nets.actor.forward_batch(&states)?;
    let (q, critic_cache) = nets.critic.forward_batch(&concat_rows(&states, &actions))?;
    let count = batch.len() as f64;
    let objective = q.data().iter().sum::<f64>() / count;
    if !objective.is_finite() {
        return Err(DsrlError::non_finite("actor objective"));
    }
    let dq = nets.critic.backward_batch(&critic_cache, &Matrix::from_vec(batch.len(), 1, vec![1.0 / count; batch.len()])?)?;
    // descend on −J: upstream is −∂Q/∂a per sample
    let mut upstream = Matrix::zeros(batch.len(), m);
    for i in 0..batch.len() {
        for j in 0..m {
            upstream[(i, j)] = -dq.input_grad[(i, n + j)];
        }
    }
    let grads = nets.actor.backward_batch(&actor_cache, &upstream)?;
    let adam = nets.adam;
    adam.step(&mut nets.actor, &grads, &mut nets.actor_opt, lr)?;
    Ok(objective)
}

/// `θ′ ← τθ + (1 − τ)θ′` for both target networks.
pub fn soft_update(nets: &mut AgentNets) -> Result<()> {
    let tau = nets.tau;
    nets.target_actor.blend_from(&nets.actor, tau)?;
    nets.target_critic.blend_from(&nets.critic, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Adversarial ω with sample-average safety rows.
    Dsrl,
    /// Safety rows at the prior mean; ω never moves.
    Baseline,
}

/// Saved policy, critic and adversary noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub env: EnvKind,
    pub mode: TrainMode,
    pub episode: usize,
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub target_actor: MlpParams,
    pub target_critic: MlpParams,
    pub omega: Vec<f64>,
    /// Center of the ambiguity ball the noise lives in.
    pub omega_center: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let n = ck.env.state_dim();
        if ck.actor.input_size() != n || ck.omega.len() != n || ck.omega_center.len() != n {
            return Err(DsrlError::Shape(format!("checkpoint does not match a {}-state environment", n)));
        }
        Ok(ck)
    }
}
