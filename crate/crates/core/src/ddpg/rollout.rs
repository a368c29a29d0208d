use rand::Rng;

use super::agent::AgentNets;
use super::buffer::Transition;
use super::noise::OuNoise;
use crate::adversary::NoisePrior;
use crate::cbf::{assemble_safety_qp, cbf_row, fallback_action, mean_vector, BarrierSpec};
use crate::diffqp::{solve_qp, solve_with_jacobian, QpStatus};
use crate::envs::{EnvModel, Trajectory};
use crate::error::Result;
use crate::net::Matrix;

/// Where a per-step noise vector comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    /// The same vector every step.
    Fixed(Vec<f64>),
    /// Prior draws moved by `shift`: the sample mean for safety-row assembly,
    /// a single fresh draw for the executed dynamics.
    Sampled { shift: Vec<f64> },
}

/// Everything a rollout needs besides the networks.
#[derive(Debug, Clone)]
pub struct RolloutPlan<'a> {
    pub model: &'a EnvModel,
    pub barriers: &'a [BarrierSpec],
    pub prior: &'a NoisePrior,
    pub samples_per_step: usize,
    pub assembly: NoiseSource,
    pub executed: NoiseSource,
    /// Record `∂u_r/∂ω` at every step.
    pub record_jacobians: bool,
}

/// `clamp(μ(x) + N)` with one draw of the exploration process.
pub fn select_action<R: Rng + ?Sized>(
    nets: &AgentNets,
    x: &[f64],
    noise: &mut OuNoise,
    rng: &mut R,
    lo: &[f64],
    hi: &[f64],
) -> Result<Vec<f64>> {
    let mut a = nets.actor.predict(x)?;
    let n = noise.sample(rng);
    for (j, v) in a.iter_mut().enumerate() {
        *v = (*v + n[j]).clamp(lo[j], hi[j]);
    }
    Ok(a)
}

fn shifted(base: Vec<f64>, shift: &[f64]) -> Vec<f64> {
    base.iter().zip(shift).map(|(b, s)| b + s).collect()
}

/// Rolls out one episode with the safety filter in the loop.
///
/// `on_step` sees every transition right after it happens and may update the
/// networks. A numeric failure of the environment or the filter ends the
/// episode early with `aborted` set; errors from `on_step` propagate.
pub fn run_episode<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    nets: &mut AgentNets,
    plan: &RolloutPlan<'_>,
    exploration: &mut OuNoise,
    explore_rng: &mut R1,
    noise_rng: &mut R2,
    on_step: &mut dyn FnMut(&mut AgentNets, &Transition) -> Result<()>,
) -> Result<(Trajectory, Vec<Transition>)> {
    let model = plan.model;
    let (n, m) = (model.n(), model.m());
    let mut traj = Trajectory { states: vec![model.x0.clone()], ..Default::default() };
    traj.h_values.push(model.safety_value(&model.x0));
    let mut transitions = Vec::with_capacity(model.horizon);
    exploration.reset();

    for _ in 0..model.horizon {
        let x = traj.states.last().expect("non-empty").clone();
        let u_rl = select_action(nets, &x, exploration, explore_rng, &model.u_lo, &model.u_hi)?;
        let assembly = match &plan.assembly {
            NoiseSource::Fixed(w) => w.clone(),
            NoiseSource::Sampled { shift } => {
                let draws: Vec<Vec<f64>> = (0..plan.samples_per_step).map(|_| plan.prior.sample(noise_rng)).collect();
                shifted(mean_vector(&draws), shift)
            }
        };
        let omega0 = plan.prior.sample(noise_rng);
        let executed = match &plan.executed {
            NoiseSource::Fixed(w) => w.clone(),
            NoiseSource::Sampled { shift } => shifted(omega0.clone(), shift),
        };

        let step = (|| -> Result<(Vec<f64>, Option<Matrix>, bool, bool, Vec<f64>, _)> {
            let rows = plan
                .barriers
                .iter()
                .map(|spec| cbf_row(spec, model, &x, &assembly))
                .collect::<Result<Vec<_>>>()?;
            let sqp = assemble_safety_qp(&u_rl, &model.u_lo, &model.u_hi, &rows, &assembly)?;
            let (sol, jac) = if plan.record_jacobians {
                let (sol, jac) = solve_with_jacobian(&sqp.qp)?;
                (sol, Some(jac))
            } else {
                (solve_qp(&sqp.qp)?, None)
            };
            let (mut u_r, fallback) = if sol.status == QpStatus::Optimal {
                (sol.z, false)
            } else {
                (fallback_action(&rows, &model.u_lo, &model.u_hi, &assembly, &x)?, true)
            };
            model.clamp_control(&mut u_r);
            let mut jac_failed = false;
            let du = match jac {
                Some(Ok(dz_dh)) if !fallback => Some(sqp.chain_omega(&dz_dh)?),
                Some(_) => {
                    jac_failed = !fallback;
                    Some(Matrix::zeros(m, n))
                }
                None => None,
            };
            let x_next = model.step(&x, &u_r, &executed)?;
            Ok((u_r, du, fallback, jac_failed, x_next, sqp))
        })();

        let (u_r, du, fallback, jac_failed, x_next, sqp) = match step {
            Ok(v) => v,
            Err(e) if e.is_numeric() => {
                log::warn!("episode aborted at step {}: {e}", traj.len());
                traj.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let r = model.reward(&x_next, &u_r);
        let done = model.goal_reached(&x_next);
        traj.qp_fallbacks += usize::from(fallback);
        traj.jacobian_failures += usize::from(jac_failed);
        if let Some(du) = du {
            traj.du_domega.push(du);
        }
        traj.safety_qps.push(sqp);
        traj.actions_rl.push(u_rl.clone());
        traj.actions_rect.push(u_r.clone());
        traj.rewards.push(r);
        traj.omega0_samples.push(omega0.clone());
        traj.executed_noise.push(executed);
        traj.h_values.push(model.safety_value(&x_next));
        traj.states.push(x_next.clone());

        let t = Transition { s: x, a: u_rl, a_r: u_r, r, s_next: x_next, omega0, done };
        on_step(nets, &t)?;
        transitions.push(t);
        if done {
            traj.reached_goal = true;
            break;
        }
    }
    Ok((traj, transitions))
}
