//! Barrier functions and the min-norm safety QP.
//!
//! For a barrier `h` the safety condition along `ẋ = f + g u + ω` is written
//! as one affine-in-control row
//!
//! ```text
//!     a_u · u + b0 + db · ω ≥ 0
//! ```
//!
//! Relative degree 1 uses `∇h·(f + g u + ω) + κ₁ h`. Relative degree 2 uses
//! the chain `ψ₁ = ∇h·(f + ω) + κ₁ h`, `ψ₂ = ψ̇₁ + κ₂ ψ₁`. Because `ω` shows up
//! inside `ψ₁`, `ψ₂` picks up a term `(f+ω)ᵀ∇²h(f+ω)` that is quadratic in
//! `ω`; degree-2 rows are therefore built around a reference noise and are
//! exact (value and `ω`-gradient) there. For convex barriers the row is a
//! lower bound of `ψ₂` away from the reference.

use serde::{Deserialize, Serialize};

use crate::diffqp::{solve_qp, QpInstance, QpStatus};
use crate::envs::ControlAffine;
use crate::error::{DsrlError, Result};
use crate::net::Matrix;

/// Regularization weight of the fallback max-margin program.
const FALLBACK_REG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Barrier {
    /// `c·x + offset`.
    Affine { coeffs: Vec<f64>, offset: f64 },
    /// `‖x_S − center‖² − radius²` over the state channels `S`.
    Disk { center: Vec<f64>, radius: f64, channels: Vec<usize> },
    /// `x_Sᵀ M x_S` over the state channels `S` (`M` symmetric).
    Quadratic { matrix: Matrix, channels: Vec<usize> },
}

impl Barrier {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Barrier::Affine { coeffs, offset } => coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + offset,
            Barrier::Disk { center, radius, channels } => {
                channels.iter().zip(center).map(|(&i, c)| (x[i] - c).powi(2)).sum::<f64>() - radius * radius
            }
            Barrier::Quadratic { matrix, channels } => {
                let r: Vec<f64> = channels.iter().map(|&i| x[i]).collect();
                let mr = matrix.matvec(&r).expect("validated shape");
                r.iter().zip(&mr).map(|(a, b)| a * b).sum()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            Barrier::Affine { coeffs, .. } => g.copy_from_slice(coeffs),
            Barrier::Disk { center, channels, .. } => {
                for (&i, c) in channels.iter().zip(center) {
                    g[i] = 2.0 * (x[i] - c);
                }
            }
            Barrier::Quadratic { matrix, channels } => {
                let r: Vec<f64> = channels.iter().map(|&i| x[i]).collect();
                for (a, &i) in channels.iter().enumerate() {
                    g[i] = (0..r.len()).map(|b| (matrix[(a, b)] + matrix[(b, a)]) * r[b]).sum();
                }
            }
        }
        g
    }

    pub fn hessian(&self, n: usize) -> Matrix {
        let mut h = Matrix::zeros(n, n);
        match self {
            Barrier::Affine { .. } => {}
            Barrier::Disk { channels, .. } => {
                for &i in channels {
                    h[(i, i)] = 2.0;
                }
            }
            Barrier::Quadratic { matrix, channels } => {
                for (a, &i) in channels.iter().enumerate() {
                    for (b, &j) in channels.iter().enumerate() {
                        h[(i, j)] = matrix[(a, b)] + matrix[(b, a)];
                    }
                }
            }
        }
        h
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let ok = match self {
            Barrier::Affine { coeffs, .. } => coeffs.len() == n,
            Barrier::Disk { center, channels, .. } => {
                center.len() == channels.len() && channels.iter().all(|&i| i < n)
            }
            Barrier::Quadratic { matrix, channels } => {
                matrix.shape() == (channels.len(), channels.len()) && channels.iter().all(|&i| i < n)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DsrlError::Shape(format!("barrier does not fit a {n}-dimensional state")))
        }
    }
}

/// A barrier with its relative degree and linear class-K gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub barrier: Barrier,
    pub relative_degree: u8,
    pub kappa1: f64,
    /// Unused for relative degree 1.
    pub kappa2: f64,
}

impl BarrierSpec {
    pub fn new(barrier: Barrier, relative_degree: u8, kappa1: f64, kappa2: f64) -> Self {
        BarrierSpec { barrier, relative_degree, kappa1, kappa2 }
    }

    fn validate(&self, n: usize) -> Result<()> {
        self.barrier.check_dim(n)?;
        if !(self.kappa1 > 0.0) || (self.relative_degree == 2 && !(self.kappa2 > 0.0)) {
            return Err(DsrlError::Argument("class-K gains must be positive".into()));
        }
        Ok(())
    }
}

/// `a_u · u + b0 + db_domega · ω ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyRow {
    pub a_u: Vec<f64>,
    pub b0: f64,
    pub db_domega: Vec<f64>,
}

impl SafetyRow {
    pub fn offset(&self, omega: &[f64]) -> f64 {
        self.b0 + dot(&self.db_domega, omega)
    }

    pub fn eval(&self, u: &[f64], omega: &[f64]) -> f64 {
        dot(&self.a_u, u) + self.offset(omega)
    }

    fn check_finite(self, what: &str) -> Result<Self> {
        if self.a_u.iter().chain(&self.db_domega).all(|v| v.is_finite()) && self.b0.is_finite() {
            Ok(self)
        } else {
            Err(DsrlError::non_finite(what))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_state<M: ControlAffine + ?Sized>(model: &M, x: &[f64]) -> Result<()> {
    if x.len() != model.state_dim() {
        return Err(DsrlError::Shape(format!("state has {} entries, model {}", x.len(), model.state_dim())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DsrlError::non_finite("barrier state"));
    }
    Ok(())
}

/// Relative-degree-1 row: `a_u = gᵀ∇h`, `b0 = ∇h·f + κ₁h`, `db = ∇h`.
pub fn cbf_row_deg1<M: ControlAffine + ?Sized>(spec: &BarrierSpec, model: &M, x: &[f64]) -> Result<SafetyRow> {
    if spec.relative_degree != 1 {
        return Err(DsrlError::Argument("cbf_row_deg1 needs a relative-degree-1 barrier".into()));
    }
    let n = model.state_dim();
    spec.validate(n)?;
    check_state(model, x)?;
    let grad = spec.barrier.gradient(x);
    let f = model.drift(x);
    let g = model.input_matrix(x);
    SafetyRow {
        a_u: g.tr_matvec(&grad)?,
        b0: dot(&grad, &f) + spec.kappa1 * spec.barrier.value(x),
        db_domega: grad,
    }
    .check_finite("degree-1 safety row")
}

/// Relative-degree-2 row, exact at `omega_ref` (see module docs).
pub fn cbf_row_deg2<M: ControlAffine + ?Sized>(
    spec: &BarrierSpec,
    model: &M,
    x: &[f64],
    omega_ref: &[f64],
) -> Result<SafetyRow> {
    if spec.relative_degree != 2 {
        return Err(DsrlError::Argument("cbf_row_deg2 needs a relative-degree-2 barrier".into()));
    }
    let n = model.state_dim();
    spec.validate(n)?;
    check_state(model, x)?;
    if omega_ref.len() != n {
        return Err(DsrlError::Shape(format!("reference noise has {} entries", omega_ref.len())));
    }
    let h = spec.barrier.value(x);
    let grad = spec.barrier.gradient(x);
    let hess = spec.barrier.hessian(n);
    let f = model.drift(x);
    let g = model.input_matrix(x);
    let jf = model.drift_jacobian(x);

    let lg_h = g.tr_matvec(&grad)?;
    let scale = 1.0 + grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if lg_h.iter().any(|v| v.abs() > 1e-9 * scale) {
        return Err(DsrlError::Argument("control enters ∇h·ẋ; barrier is not relative degree 2".into()));
    }
    if hess.matmul(&g)?.max_abs() > 1e-12 {
        return Err(DsrlError::Argument("∇²h·g must vanish for an ω-independent control row".into()));
    }

    let f_w: Vec<f64> = f.iter().zip(omega_ref).map(|(a, b)| a + b).collect();
    let psi1 = dot(&grad, &f_w) + spec.kappa1 * h;
    // ∇ψ₁ = ∇²h (f + ω) + (∂f/∂x)ᵀ∇h + κ₁∇h
    let hess_fw = hess.matvec(&f_w)?;
    let jf_t_grad = jf.tr_matvec(&grad)?;
    let grad_psi1: Vec<f64> =
        (0..n).map(|i| hess_fw[i] + jf_t_grad[i] + spec.kappa1 * grad[i]).collect();

    let a_u = g.tr_matvec(&grad_psi1)?;
    let psi2_free = dot(&grad_psi1, &f_w) + spec.kappa2 * psi1;
    let db: Vec<f64> = (0..n).map(|i| hess_fw[i] + grad_psi1[i] + spec.kappa2 * grad[i]).collect();
    let b0 = psi2_free - dot(&db, omega_ref);
    SafetyRow { a_u, b0, db_domega: db }.check_finite("degree-2 safety row")
}

/// Dispatches on the relative degree; `omega_ref` only matters for degree 2.
pub fn cbf_row<M: ControlAffine + ?Sized>(
    spec: &BarrierSpec,
    model: &M,
    x: &[f64],
    omega_ref: &[f64],
) -> Result<SafetyRow> {
    match spec.relative_degree {
        1 => cbf_row_deg1(spec, model, x),
        2 => cbf_row_deg2(spec, model, x, omega_ref),
        d => Err(DsrlError::Argument(format!("unsupported relative degree {d}"))),
    }
}

/// Sample-average of a row over noise draws. The row is affine in `ω`, so
/// the average is the same row with its offset moved by `db · mean(ω₀)`.
pub fn average_row(row: &SafetyRow, samples: &[Vec<f64>]) -> Result<SafetyRow> {
    let Some(first) = samples.first() else {
        return Err(DsrlError::Argument("average_row needs at least one sample".into()));
    };
    let n = first.len();
    if n != row.db_domega.len() || samples.iter().any(|s| s.len() != n) {
        return Err(DsrlError::Shape("noise samples do not match row".into()));
    }
    let mean = mean_vector(samples);
    Ok(SafetyRow { a_u: row.a_u.clone(), b0: row.offset(&mean), db_domega: row.db_domega.clone() })
}

pub(crate) fn mean_vector(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples[0].len();
    let mut mean = vec![0.0; n];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    mean
}

/// The assembled safety program plus `∂h/∂ω` for its offset vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyQp {
    pub qp: QpInstance,
    /// `∂h/∂ω` (k×n): `db` for barrier rows, zero for box rows.
    pub h_omega: Matrix,
    pub num_barrier_rows: usize,
}

/// `min ‖u − u_rl‖²` subject to every row at `omega` and the control box.
///
/// Barrier rows become `−a_u·u ≤ b0 + db·ω`; box bounds become `u_j ≤ hi_j`
/// and `−u_j ≤ −lo_j`, in that order after the barrier rows.
pub fn assemble_safety_qp(
    u_rl: &[f64],
    lo: &[f64],
    hi: &[f64],
    rows: &[SafetyRow],
    omega: &[f64],
) -> Result<SafetyQp> {
    let m = u_rl.len();
    if lo.len() != m || hi.len() != m {
        return Err(DsrlError::Shape("bounds do not match control".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
        return Err(DsrlError::Argument("control bounds must be finite and ordered".into()));
    }
    let n = omega.len();
    if rows.iter().any(|r| r.a_u.len() != m || r.db_domega.len() != n) {
        return Err(DsrlError::Shape("safety row dimensions".into()));
    }
    let k = rows.len() + 2 * m;
    let mut g = Matrix::zeros(k, m);
    let mut h = vec![0.0; k];
    let mut h_omega = Matrix::zeros(k, n);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..m {
            g[(i, j)] = -row.a_u[j];
        }
        h[i] = row.offset(omega);
        h_omega.row_mut(i).copy_from_slice(&row.db_domega);
    }
    for j in 0..m {
        let up = rows.len() + 2 * j;
        g[(up, j)] = 1.0;
        h[up] = hi[j];
        g[(up + 1, j)] = -1.0;
        h[up + 1] = -lo[j];
    }
    let qp = QpInstance::new(
        Matrix::scaled_identity(m, 2.0),
        u_rl.iter().map(|v| -2.0 * v).collect(),
        g,
        h,
    );
    Ok(SafetyQp { qp, h_omega, num_barrier_rows: rows.len() })
}

impl SafetyQp {
    /// `∂u_r/∂ω = (∂z⋆/∂h)(∂h/∂ω)`.
    pub fn chain_omega(&self, dz_dh: &Matrix) -> Result<Matrix> {
        dz_dh.matmul(&self.h_omega)
    }

    /// Copy with every offset moved as if the noise had changed by `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<SafetyQp> {
        let dh = self.h_omega.matvec(delta)?;
        let mut out = self.clone();
        out.qp.h.iter_mut().zip(&dh).for_each(|(h, d)| *h += d);
        Ok(out)
    }
}

/// Best-effort action when the safety QP is infeasible: maximizes the
/// smallest row margin `min_i (a_u·u + b_i)` over the control box.
///
/// Solved as the lightly regularized program
/// `min −t + ½ε(‖u − c‖² + t²)` s.t. `t ≤ a_i·u + b_i`, box, with `c` the box
/// center, so ties resolve toward the center.
pub fn fallback_action(rows: &[SafetyRow], lo: &[f64], hi: &[f64], omega: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let m = lo.len();
    if rows.is_empty() {
        return Ok(lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect());
    }
    let dim = m + 1;
    let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let mut lin: Vec<f64> = center.iter().map(|c| -FALLBACK_REG * c).collect();
    lin.push(-1.0);
    let k = rows.len() + 2 * m;
    let mut g = Matrix::zeros(k, dim);
    let mut h = vec![0.0; k];
    for (i, row) in rows.iter().enumerate() {
        for j in 0..m {
            g[(i, j)] = -row.a_u[j];
        }
        g[(i, m)] = 1.0;
        h[i] = row.offset(omega);
    }
    for j in 0..m {
        let up = rows.len() + 2 * j;
        g[(up, j)] = 1.0;
        h[up] = hi[j];
        g[(up + 1, j)] = -1.0;
        h[up + 1] = -lo[j];
    }
    let qp = QpInstance::new(Matrix::scaled_identity(dim, FALLBACK_REG), lin, g, h);
    let sol = solve_qp(&qp)?;
    log::warn!("safety QP infeasible at state {x:?}; using max-margin fallback ({:?})", sol.status);
    if sol.status != QpStatus::Optimal {
        return Ok(center);
    }
    let mut u = sol.z[..m].to_vec();
    for ((v, l), h) in u.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
    Ok(u)
}

/// Smallest row margin at `u`.
pub fn min_margin(rows: &[SafetyRow], u: &[f64], omega: &[f64]) -> f64 {
    rows.iter().map(|r| r.eval(u, omega)).fold(f64::INFINITY, f64::min)
}
