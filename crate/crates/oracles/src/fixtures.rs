//! Random instances and short adversarial rollouts used by the checks.

use dsrl_core::adversary::NoisePrior;
use dsrl_core::config::RunConfig;
use dsrl_core::ddpg::{ambiguity_ball, run_episode, AgentNets, NoiseSource, OuNoise, RolloutPlan};
use dsrl_core::diffqp::QpInstance;
use dsrl_core::envs::{EnvKind, EnvModel, Geometry, Trajectory};
use dsrl_core::net::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A start state with a small positive barrier value, so safety rows bind.
pub fn near_boundary_state<R: Rng>(model: &EnvModel, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; model.n()];
    match &model.geometry {
        Geometry::Obstacle { center, radius } => {
            let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let dist = radius + rng.gen_range(0.02..0.3);
            x[0] = center[0] + dist * angle.cos();
            x[1] = center[1] + dist * angle.sin();
            x[2] = rng.gen_range(-3.0..3.0);
            if model.kind == EnvKind::Dubins2 {
                for v in &mut x[3..6] {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        Geometry::GlideSlope { half_angle_deg } => {
            let slope = half_angle_deg.to_radians().tan();
            let z = rng.gen_range(1.0..4.0);
            let radial = z * slope * rng.gen_range(0.85..0.98);
            let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            x = vec![radial * angle.cos(), radial * angle.sin(), z];
        }
    }
    x
}

/// Random policy rolled out for `horizon` steps from a near-boundary start
/// with ω at a random point of the ambiguity ball; QP Jacobians recorded.
pub fn short_rollout(kind: EnvKind, seed: u64, horizon: usize) -> (RunConfig, EnvModel, Trajectory, Vec<f64>) {
    let cfg = RunConfig::default_for(kind);
    let mut model = cfg.env_model().expect("default config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.horizon = horizon;
    model.x0 = near_boundary_state(&model, &mut rng);
    let prior = NoisePrior::from_config(&cfg.noise).expect("prior");
    let ball = ambiguity_ball(&cfg, &prior).expect("ball");
    let omega = ball.random_point(&mut rng);
    let shift: Vec<f64> = omega.iter().zip(&ball.center).map(|(w, c)| w - c).collect();
    let barriers = model.barriers(cfg.cbf.kappa1, cfg.cbf.kappa2);
    let mut ddpg = cfg.ddpg.clone();
    ddpg.actor_hidden = vec![16];
    ddpg.critic_hidden = vec![16];
    ddpg.final_layer_init = 1.0;
    let mut nets = AgentNets::new(model.n(), &model.u_lo, &model.u_hi, &ddpg, &mut rng).expect("nets");
    let plan = RolloutPlan {
        model: &model,
        barriers: &barriers,
        prior: &prior,
        samples_per_step: cfg.noise.samples_per_step,
        assembly: NoiseSource::Sampled { shift: shift.clone() },
        executed: NoiseSource::Sampled { shift },
        record_jacobians: true,
    };
    let mut ou = OuNoise::new(model.m(), 0.15, 0.3).expect("ou");
    let mut explore = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a);
    let (traj, _) =
        run_episode(&mut nets, &plan, &mut ou, &mut explore, &mut noise, &mut |_, _| Ok(())).expect("rollout");
    (cfg, model, traj, omega)
}

/// Feasible random QP with `Q = 2I`, `m ≤ 4` variables and `k ≤ 6` rows.
/// Roughly 40% of the rows pass through a common feasible point.
pub fn random_qp<R: Rng>(rng: &mut R) -> QpInstance {
    let m = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=6);
    let z0: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let h = rows
        .iter()
        .map(|r| {
            let slack = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..1.0) };
            r.iter().zip(&z0).map(|(a, b)| a * b).sum::<f64>() + slack
        })
        .collect();
    let lin = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
    QpInstance::new(Matrix::scaled_identity(m, 2.0), lin, Matrix::from_rows(&rows).expect("rows"), h)
}

/// Rows of `G` as plain vectors.
pub fn qp_rows(qp: &QpInstance) -> Vec<Vec<f64>> {
    (0..qp.num_ineq()).map(|i| qp.g.row(i).to_vec()).collect()
}
