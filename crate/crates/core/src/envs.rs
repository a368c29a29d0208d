//! Control-affine test systems `ẋ = f(x) + g(x)u + ω`.
//!
//! * first-order Dubins car: state `(x, y, θ)`, body-frame velocity inputs
//! * second-order Dubins car: state `(x, y, θ, ẋ, ẏ, θ̇)`, body-frame
//!   acceleration inputs
//! * heading-locked quadcopter: state `(x, y, z)`, virtual control
//!   `v = (T sinθ, T cosθ sinφ, T cosθ cosφ − g)` so the model is `ẋ = v`
//!
//! All three integrate with explicit Euler, which keeps [`EnvModel::step_grads`]
//! exact for the simulated system. The noise `ω` enters every state channel.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::{Barrier, BarrierSpec, SafetyQp};
use crate::error::{DsrlError, Result};
use crate::net::Matrix;

/// Dynamics interface consumed by the barrier-row builders.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Drift `f(x)`.
    fn drift(&self, x: &[f64]) -> Vec<f64>;
    /// Input matrix `g(x)` (n×m).
    fn input_matrix(&self, x: &[f64]) -> Matrix;
    /// `∂f/∂x` (n×n).
    fn drift_jacobian(&self, x: &[f64]) -> Matrix;
    /// `∂(g(x)u)/∂x` at fixed `u` (n×n).
    fn input_jacobian(&self, x: &[f64], u: &[f64]) -> Matrix;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Dubins1,
    Dubins2,
    Quad,
}

impl EnvKind {
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Dubins1 | EnvKind::Quad => 3,
            EnvKind::Dubins2 => 6,
        }
    }

    pub fn control_dim(self) -> usize {
        3
    }

    /// Indices of the position channels.
    pub fn position_channels(self) -> &'static [usize] {
        match self {
            EnvKind::Dubins1 | EnvKind::Dubins2 => &[0, 1],
            EnvKind::Quad => &[0, 1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Dubins1 => "dubins1",
            EnvKind::Dubins2 => "dubins2",
            EnvKind::Quad => "quad",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Disk obstacle in the plane.
    Obstacle { center: [f64; 2], radius: f64 },
    /// Landing cone with apex at the origin, opening upward.
    GlideSlope { half_angle_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Weight on squared distance to goal.
    pub d: f64,
    /// Per-step time penalty.
    pub s: f64,
    /// Weight on squared velocity (second-order car only).
    pub b: f64,
}

/// An environment instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModel {
    pub kind: EnvKind,
    pub dt: f64,
    pub horizon: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub reward: RewardParams,
    pub goal_tolerance: f64,
    pub geometry: Geometry,
    /// Gravitational acceleration (quadcopter attitude recovery).
    pub gravity: f64,
}

/// Jacobians of one Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub wrt_state: Matrix,
    pub wrt_control: Matrix,
    pub wrt_noise: Matrix,
}

fn rotation(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

impl EnvModel {
    pub fn n(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn m(&self) -> usize {
        self.kind.control_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DsrlError::config("env.dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(DsrlError::config("env.horizon", "must be at least 1"));
        }
        if self.x0.len() != n {
            return Err(DsrlError::config("env.x0", format!("expected {n} entries")));
        }
        if self.xf.len() != n {
            return Err(DsrlError::config("env.xf", format!("expected {n} entries")));
        }
        if self.u_lo.len() != m || self.u_hi.len() != m {
            return Err(DsrlError::config("env.u_lo/u_hi", format!("expected {m} entries")));
        }
        if self.u_lo.iter().zip(&self.u_hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(DsrlError::config("env.u_lo/u_hi", "bounds must be finite with lower < upper"));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(DsrlError::config("env.goal_tolerance", "must be positive"));
        }
        match self.geometry {
            Geometry::Obstacle { radius, center } => {
                if self.kind == EnvKind::Quad {
                    return Err(DsrlError::config("env.glide_slope_deg", "quad needs a glide slope"));
                }
                if !(radius > 0.0 && radius.is_finite()) || center.iter().any(|c| !c.is_finite()) {
                    return Err(DsrlError::config("env.obstacle_radius", "must be positive and finite"));
                }
            }
            Geometry::GlideSlope { half_angle_deg } => {
                if self.kind != EnvKind::Quad {
                    return Err(DsrlError::config("env.obstacle_center", "dubins cars need an obstacle"));
                }
                if !(half_angle_deg > 0.0 && half_angle_deg < 90.0) {
                    return Err(DsrlError::config("env.glide_slope_deg", "must lie in (0, 90) degrees"));
                }
            }
        }
        let r = &self.reward;
        if !(r.d > 0.0 && r.s >= 0.0 && r.b >= 0.0) {
            return Err(DsrlError::config("env.reward", "need d > 0, s ≥ 0, b ≥ 0"));
        }
        if self.kind == EnvKind::Quad && !(self.gravity > 0.0) {
            return Err(DsrlError::config("env.gravity", "must be positive"));
        }
        if self.safety_value(&self.x0) <= 0.0 {
            return Err(DsrlError::config("env.x0", "initial state must lie strictly inside the safe set"));
        }
        Ok(())
    }

    pub fn position<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        match self.kind {
            EnvKind::Dubins1 | EnvKind::Dubins2 => &x[0..2],
            EnvKind::Quad => &x[0..3],
        }
    }

    /// Euler step `x + dt (f(x) + g(x)u + ω)`.
    pub fn step(&self, x: &[f64], u: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n || u.len() != self.m() || omega.len() != n {
            return Err(DsrlError::Shape(format!(
                "step: state {}, control {}, noise {} for {}",
                x.len(),
                u.len(),
                omega.len(),
                self.kind
            )));
        }
        let f = self.drift(x);
        let gu = self.input_matrix(x).matvec(u)?;
        let next: Vec<f64> = (0..n).map(|i| x[i] + self.dt * (f[i] + gu[i] + omega[i])).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DsrlError::non_finite(format!("{} step", self.kind)));
        }
        Ok(next)
    }

    pub fn step_grads(&self, x: &[f64], u: &[f64], _omega: &[f64]) -> Result<StepJacobians> {
        let n = self.n();
        let mut wrt_state = Matrix::identity(n);
        let jf = self.drift_jacobian(x);
        let jg = self.input_jacobian(x, u);
        for i in 0..n {
            for j in 0..n {
                wrt_state[(i, j)] += self.dt * (jf[(i, j)] + jg[(i, j)]);
            }
        }
        let mut wrt_control = self.input_matrix(x);
        wrt_control.scale_mut(self.dt);
        Ok(StepJacobians { wrt_state, wrt_control, wrt_noise: Matrix::scaled_identity(n, self.dt) })
    }

    /// Reward of being in `x` (all three rewards ignore the control).
    pub fn reward(&self, x: &[f64], _u: &[f64]) -> f64 {
        let dist2 = self.goal_distance_sq(x);
        match self.kind {
            EnvKind::Dubins1 => -self.reward.d * dist2 - self.reward.s,
            EnvKind::Dubins2 => {
                let v2 = x[3] * x[3] + x[4] * x[4];
                -self.reward.d * dist2 - self.reward.b * v2 - self.reward.s
            }
            EnvKind::Quad => -dist2,
        }
    }

    /// `(∂R/∂x, ∂R/∂u)`.
    pub fn reward_grads(&self, x: &[f64], _u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; self.n()];
        let weight = match self.kind {
            EnvKind::Quad => 1.0,
            _ => self.reward.d,
        };
        for &i in self.kind.position_channels() {
            gx[i] = -2.0 * weight * (x[i] - self.xf[i]);
        }
        if self.kind == EnvKind::Dubins2 {
            gx[3] = -2.0 * self.reward.b * x[3];
            gx[4] = -2.0 * self.reward.b * x[4];
        }
        (gx, vec![0.0; self.m()])
    }

    pub fn goal_distance_sq(&self, x: &[f64]) -> f64 {
        self.kind.position_channels().iter().map(|&i| (x[i] - self.xf[i]).powi(2)).sum()
    }

    pub fn goal_reached(&self, x: &[f64]) -> bool {
        self.goal_distance_sq(x).sqrt() < self.goal_tolerance
    }

    /// Barriers defining the safe set, with the given class-K gains.
    pub fn barriers(&self, kappa1: f64, kappa2: f64) -> Vec<BarrierSpec> {
        match (&self.geometry, self.kind) {
            (Geometry::Obstacle { center, radius }, kind) => {
                let disk = Barrier::Disk { center: center.to_vec(), radius: *radius, channels: vec![0, 1] };
                let degree = if kind == EnvKind::Dubins2 { 2 } else { 1 };
                vec![BarrierSpec::new(disk, degree, kappa1, kappa2)]
            }
            (Geometry::GlideSlope { half_angle_deg }, _) => {
                let cot2 = 1.0 / half_angle_deg.to_radians().tan().powi(2);
                let m = Matrix::from_rows(&[
                    vec![-cot2, 0.0, 0.0],
                    vec![0.0, -cot2, 0.0],
                    vec![0.0, 0.0, 1.0],
                ])
                .expect("3x3");
                let cone = Barrier::Quadratic { matrix: m, channels: vec![0, 1, 2] };
                // the cone's lower nappe also satisfies rᵀMr ≥ 0; keep z ≥ 0
                let ground = Barrier::Affine { coeffs: vec![0.0, 0.0, 1.0], offset: 0.0 };
                vec![
                    BarrierSpec::new(cone, 1, kappa1, kappa2),
                    BarrierSpec::new(ground, 1, kappa1, kappa2),
                ]
            }
        }
    }

    /// Smallest barrier value at `x`; nonnegative means safe.
    pub fn safety_value(&self, x: &[f64]) -> f64 {
        self.barriers(1.0, 1.0).iter().map(|b| b.barrier.value(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn clamp_control(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.u_lo).zip(&self.u_hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

impl ControlAffine for EnvModel {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn control_dim(&self) -> usize {
        self.m()
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Dubins1 | EnvKind::Quad => vec![0.0; self.n()],
            EnvKind::Dubins2 => vec![x[3], x[4], x[5], 0.0, 0.0, 0.0],
        }
    }

    fn input_matrix(&self, x: &[f64]) -> Matrix {
        let mut g = Matrix::zeros(self.n(), 3);
        match self.kind {
            EnvKind::Dubins1 | EnvKind::Dubins2 => {
                let r0 = if self.kind == EnvKind::Dubins1 { 0 } else { 3 };
                let (c, s) = rotation(x[2]);
                g[(r0, 0)] = c;
                g[(r0, 1)] = -s;
                g[(r0 + 1, 0)] = s;
                g[(r0 + 1, 1)] = c;
                g[(r0 + 2, 2)] = 1.0;
            }
            EnvKind::Quad => g = Matrix::identity(3),
        }
        g
    }

    fn drift_jacobian(&self, _x: &[f64]) -> Matrix {
        let mut j = Matrix::zeros(self.n(), self.n());
        if self.kind == EnvKind::Dubins2 {
            for i in 0..3 {
                j[(i, i + 3)] = 1.0;
            }
        }
        j
    }

    fn input_jacobian(&self, x: &[f64], u: &[f64]) -> Matrix {
        let mut j = Matrix::zeros(self.n(), self.n());
        if let EnvKind::Dubins1 | EnvKind::Dubins2 = self.kind {
            let r0 = if self.kind == EnvKind::Dubins1 { 0 } else { 3 };
            let (c, s) = rotation(x[2]);
            j[(r0, 2)] = -s * u[0] - c * u[1];
            j[(r0 + 1, 2)] = c * u[0] - s * u[1];
        }
        j
    }
}

/// Physical quadcopter command recovered from a virtual control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    pub thrust: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Inverts `v = (T sinθ, T cosθ sinφ, T cosθ cosφ − g)`.
pub fn recover_attitude(v: &[f64], gravity: f64) -> Result<Attitude> {
    if v.len() != 3 {
        return Err(DsrlError::Shape(format!("virtual control has {} entries", v.len())));
    }
    let vertical = v[2] + gravity;
    let thrust = (v[0] * v[0] + v[1] * v[1] + vertical * vertical).sqrt();
    if !(thrust > 1e-9) {
        return Err(DsrlError::FreeFall(thrust));
    }
    let pitch = (v[0] / thrust).clamp(-1.0, 1.0).asin();
    let roll = v[1].atan2(vertical);
    Ok(Attitude { thrust, pitch, roll })
}

/// Forward map of [`recover_attitude`].
pub fn attitude_to_virtual(att: Attitude, gravity: f64) -> [f64; 3] {
    let (st, ct) = (att.pitch.sin(), att.pitch.cos());
    let (sp, cp) = (att.roll.sin(), att.roll.cos());
    [att.thrust * st, att.thrust * ct * sp, att.thrust * ct * cp - gravity]
}

/// One recorded rollout.
///
/// `states` has one more entry than the per-step sequences. `rewards[k]` is
/// the reward observed after applying `actions_rect[k]`, i.e. `R(states[k+1])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions_rl: Vec<Vec<f64>>,
    pub actions_rect: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Fresh prior draws `ω₀` taken at each step.
    pub omega0_samples: Vec<Vec<f64>>,
    /// Noise actually applied in each Euler step.
    pub executed_noise: Vec<Vec<f64>>,
    /// Per-step safety QP as assembled (rows frozen at the visited state).
    pub safety_qps: Vec<SafetyQp>,
    /// Per-step `∂u_r/∂ω` (m×n); present in adversarial rollouts.
    pub du_domega: Vec<Matrix>,
    /// `min_i h_i(x_k)` for every visited state.
    pub h_values: Vec<f64>,
    pub qp_fallbacks: usize,
    pub jacobian_failures: usize,
    pub reached_goal: bool,
    /// Set when a numeric failure cut the episode short.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn min_h(&self) -> f64 {
        self.h_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self) -> usize {
        self.h_values.iter().filter(|&&h| h < 0.0).count()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Replays the recorded controls and noise; true when every state is
    /// reproduced bit for bit.
    pub fn replays_exactly(&self, model: &EnvModel) -> bool {
        (0..self.len()).all(|k| {
            model
                .step(&self.states[k], &self.actions_rect[k], &self.executed_noise[k])
                .map_or(false, |x| x == self.states[k + 1])
        })
    }

    /// CSV with one row per visited state; the final state has empty action,
    /// noise and reward fields.
    pub fn to_csv(&self, model: &EnvModel) -> String {
        let (n, m) = (model.n(), model.m());
        let mut out = String::from("t");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        for prefix in ["u_rl", "u_r"] {
            for j in 0..m {
                let _ = write!(out, ",{prefix}{j}");
            }
        }
        for i in 0..n {
            let _ = write!(out, ",w{i}");
        }
        out.push_str(",reward,h\n");
        for (k, x) in self.states.iter().enumerate() {
            let _ = write!(out, "{}", k as f64 * model.dt);
            for v in x {
                let _ = write!(out, ",{v}");
            }
            let per_step = k < self.len();
            for seq in [&self.actions_rl, &self.actions_rect] {
                for j in 0..m {
                    if per_step {
                        let _ = write!(out, ",{}", seq[k][j]);
                    } else {
                        out.push(',');
                    }
                }
            }
            for i in 0..n {
                match self.omega0_samples.get(k) {
                    Some(w) if per_step => {
                        let _ = write!(out, ",{}", w[i]);
                    }
                    _ => out.push(','),
                }
            }
            if per_step {
                let _ = write!(out, ",{}", self.rewards[k]);
            } else {
                out.push(',');
            }
            let _ = writeln!(out, ",{}", self.h_values.get(k).copied().unwrap_or(f64::NAN));
        }
        out
    }

    pub fn write_csv(&self, model: &EnvModel, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv(model).as_bytes())?;
        Ok(())
    }
}
