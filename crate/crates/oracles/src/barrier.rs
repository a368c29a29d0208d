//! Safety conditions written out by hand for each environment.

use dsrl_core::envs::{EnvKind, EnvModel, Geometry};
use rand::Rng;

/// First-order car, disk obstacle: `∇h·(g u + ω) + κ₁ h`.
pub fn dubins1_condition(x: &[f64], u: &[f64], w: &[f64], c: [f64; 2], r: f64, k1: f64) -> f64 {
    let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
    let h = dx * dx + dy * dy - r * r;
    let (ct, st) = (x[2].cos(), x[2].sin());
    let xdot = ct * u[0] - st * u[1] + w[0];
    let ydot = st * u[0] + ct * u[1] + w[1];
    2.0 * dx * xdot + 2.0 * dy * ydot + k1 * h
}

/// Second-order car: `ψ₁ = 2(p−c)·(v + ω_p) + κ₁ h`.
pub fn dubins2_psi1(x: &[f64], w: &[f64], c: [f64; 2], r: f64, k1: f64) -> f64 {
    let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
    let h = dx * dx + dy * dy - r * r;
    2.0 * dx * (x[3] + w[0]) + 2.0 * dy * (x[4] + w[1]) + k1 * h
}

/// Second-order car: `ψ₂ = ψ̇₁ + κ₂ ψ₁` with `ω` held constant.
pub fn dubins2_psi2(x: &[f64], u: &[f64], w: &[f64], c: [f64; 2], r: f64, k1: f64, k2: f64) -> f64 {
    let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
    let (px, py) = (x[3] + w[0], x[4] + w[1]);
    let (ct, st) = (x[2].cos(), x[2].sin());
    let ax = ct * u[0] - st * u[1] + w[3];
    let ay = st * u[0] + ct * u[1] + w[4];
    let psi1_dot = 2.0 * (px * px + py * py) + 2.0 * (dx * ax + dy * ay) + k1 * (2.0 * dx * px + 2.0 * dy * py);
    psi1_dot + k2 * dubins2_psi1(x, w, c, r, k1)
}

/// `ψ₂` by a central difference of `ψ₁` along `ẋ = f + g u + ω`.
pub fn dubins2_psi2_fd(x: &[f64], u: &[f64], w: &[f64], c: [f64; 2], r: f64, k1: f64, k2: f64) -> f64 {
    let (ct, st) = (x[2].cos(), x[2].sin());
    let xdot = [
        x[3] + w[0],
        x[4] + w[1],
        x[5] + w[2],
        ct * u[0] - st * u[1] + w[3],
        st * u[0] + ct * u[1] + w[4],
        u[2] + w[5],
    ];
    let eps = 1e-3;
    let along = |s: f64| -> Vec<f64> { x.iter().zip(&xdot).map(|(a, d)| a + s * d).collect() };
    // ψ₁ does not depend on θ and is quadratic in (p, v), so along a line
    // the central difference is exact up to rounding
    let d = (dubins2_psi1(&along(eps), w, c, r, k1) - dubins2_psi1(&along(-eps), w, c, r, k1)) / (2.0 * eps);
    d + k2 * dubins2_psi1(x, w, c, r, k1)
}

/// Quadcopter cone `z² − cot²δ (x² + y²)` under `ẋ = v + ω`.
pub fn quad_cone_condition(x: &[f64], v: &[f64], w: &[f64], half_angle_deg: f64, k1: f64) -> f64 {
    let cot2 = 1.0 / half_angle_deg.to_radians().tan().powi(2);
    let h = x[2] * x[2] - cot2 * (x[0] * x[0] + x[1] * x[1]);
    let vel = [v[0] + w[0], v[1] + w[1], v[2] + w[2]];
    -2.0 * cot2 * (x[0] * vel[0] + x[1] * vel[1]) + 2.0 * x[2] * vel[2] + k1 * h
}

/// Quadcopter ground `z ≥ 0`.
pub fn quad_ground_condition(x: &[f64], v: &[f64], w: &[f64], k1: f64) -> f64 {
    v[2] + w[2] + k1 * x[2]
}

fn obstacle(model: &EnvModel) -> ([f64; 2], f64) {
    match model.geometry {
        Geometry::Obstacle { center, radius } => (center, radius),
        Geometry::GlideSlope { .. } => panic!("{} has no obstacle", model.kind),
    }
}

fn cone_angle(model: &EnvModel) -> f64 {
    match model.geometry {
        Geometry::GlideSlope { half_angle_deg } => half_angle_deg,
        Geometry::Obstacle { .. } => panic!("{} has no glide slope", model.kind),
    }
}

/// Every safety condition of `model` by hand, in barrier order.
pub fn env_conditions(model: &EnvModel, x: &[f64], u: &[f64], w: &[f64], k1: f64, k2: f64) -> Vec<f64> {
    match model.kind {
        EnvKind::Dubins1 => {
            let (c, r) = obstacle(model);
            vec![dubins1_condition(x, u, w, c, r, k1)]
        }
        EnvKind::Dubins2 => {
            let (c, r) = obstacle(model);
            vec![dubins2_psi2(x, u, w, c, r, k1, k2)]
        }
        EnvKind::Quad => vec![quad_cone_condition(x, u, w, cone_angle(model), k1), quad_ground_condition(x, u, w, k1)],
    }
}

/// Barrier values by hand, in barrier order.
pub fn env_barrier_values(model: &EnvModel, x: &[f64]) -> Vec<f64> {
    match model.kind {
        EnvKind::Quad => {
            let cot2 = 1.0 / cone_angle(model).to_radians().tan().powi(2);
            vec![x[2] * x[2] - cot2 * (x[0] * x[0] + x[1] * x[1]), x[2]]
        }
        _ => {
            let (c, r) = obstacle(model);
            vec![(x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) - r * r]
        }
    }
}

/// `ψ₁` of the second-order car at `x`.
pub fn env_psi1(model: &EnvModel, x: &[f64], w: &[f64], k1: f64) -> f64 {
    let (c, r) = obstacle(model);
    dubins2_psi1(x, w, c, r, k1)
}

/// A state in a box around the hazard: the obstacle for the cars, the cone
/// apex region for the quadcopter.
pub fn random_state<R: Rng>(model: &EnvModel, rng: &mut R) -> Vec<f64> {
    match model.kind {
        EnvKind::Quad => vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..5.0)],
        _ => {
            let mut x: Vec<f64> = (0..model.n()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (c, _) = obstacle(model);
            x[0] += c[0];
            x[1] += c[1];
            x[2] *= 2.0;
            x
        }
    }
}
