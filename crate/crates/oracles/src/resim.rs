use dsrl_core::diffqp::{solve_qp, QpStatus};
use dsrl_core::envs::{EnvModel, Trajectory};

/// Discounted loss after re-simulating `traj` with the noise moved by
/// `delta`: recorded RL actions, safety rows frozen at the recorded states
/// with offsets moved by `∂h/∂ω · delta`, executed noise moved by `delta`.
pub fn frozen_row_loss(traj: &Trajectory, model: &EnvModel, delta: &[f64], gamma: f64) -> f64 {
    let mut x = traj.states[0].clone();
    let mut loss = 0.0;
    let mut weight = 1.0;
    for (k, sqp) in traj.safety_qps.iter().enumerate() {
        let mut qp = sqp.qp.clone();
        for (i, h) in qp.h.iter_mut().enumerate() {
            for (j, d) in delta.iter().enumerate() {
                *h += sqp.h_omega[(i, j)] * d;
            }
        }
        let sol = solve_qp(&qp).expect("valid QP");
        assert_eq!(sol.status, QpStatus::Optimal, "perturbed safety QP must stay feasible");
        let mut u = sol.z;
        for j in 0..u.len() {
            u[j] = u[j].clamp(model.u_lo[j], model.u_hi[j]);
        }
        let w: Vec<f64> = traj.executed_noise[k].iter().zip(delta).map(|(a, b)| a + b).collect();
        x = model.step(&x, &u, &w).expect("finite step");
        weight *= gamma;
        loss -= weight * model.reward(&x, &u);
    }
    loss
}
