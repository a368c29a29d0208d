//! Small dense convex QPs and their KKT sensitivities.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    ½ zᵀ Q z + qᵀ z
//!     subject to  G z ≤ h,   A z = b
//! ```
//!
//! with `Q` positive definite. The solver is a dual active-set method
//! (Goldfarb–Idnani): it starts from the unconstrained minimizer and adds the
//! most violated constraint at each step, dropping constraints whose
//! multipliers would turn negative. It needs no feasible starting point and
//! reports infeasibility exactly when a violated constraint cannot be
//! satisfied. The active set it returns is what [`qp_jacobian_wrt_h`]
//! differentiates through.

use serde::{Deserialize, Serialize};

use crate::error::{DsrlError, Result};
use crate::net::{solve_linear, Matrix};

/// Iteration cap (constraint additions plus drops).
pub const MAX_ITER: usize = 200;
/// Multipliers above this mark a constraint as strongly active.
pub const ACTIVE_TOL: f64 = 1e-8;
/// Constraints touching with `|slack|` below this but with a vanishing
/// multiplier are weakly active and make the solution non-differentiable.
pub const WEAK_SLACK_TOL: f64 = 1e-10;
/// Offset applied to `h` by [`solve_with_jacobian`] before its single retry.
pub const RETRY_PERTURBATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpInstance {
    /// Quadratic term `Q` (m×m, symmetric positive definite).
    pub quad: Matrix,
    /// Linear term `q`.
    pub lin: Vec<f64>,
    /// Inequality matrix `G` (k×m).
    pub g: Matrix,
    /// Inequality offsets `h`.
    pub h: Vec<f64>,
    /// Optional equality matrix `A` (p×m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    /// Inequality multipliers, elementwise nonnegative.
    pub lambda: Vec<f64>,
    /// Equality multipliers.
    pub nu: Vec<f64>,
    /// Indices of inequality constraints in the final working set.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Infinity-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub slackness: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.slackness)
    }
}

impl QpInstance {
    /// Inequality-only instance.
    pub fn new(quad: Matrix, lin: Vec<f64>, g: Matrix, h: Vec<f64>) -> Self {
        QpInstance { quad, lin, g, h, a: None, b: None }
    }

    pub fn with_equalities(mut self, a: Matrix, b: Vec<f64>) -> Self {
        self.a = Some(a);
        self.b = Some(b);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.as_ref().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.lin.len();
        if self.quad.shape() != (m, m) {
            return Err(DsrlError::Shape(format!("Q is {:?}, expected {m}x{m}", self.quad.shape())));
        }
        if !self.quad.is_symmetric(1e-10) {
            return Err(DsrlError::Argument("Q is not symmetric".into()));
        }
        if self.g.shape() != (self.h.len(), m) {
            return Err(DsrlError::Shape(format!(
                "G is {:?}, expected {}x{m}",
                self.g.shape(),
                self.h.len()
            )));
        }
        match (&self.a, &self.b) {
            (None, None) => {}
            (Some(a), Some(b)) if a.shape() == (b.len(), m) => {}
            _ => return Err(DsrlError::Shape("equality block A/b inconsistent".into())),
        }
        let finite = self.quad.is_finite()
            && self.g.is_finite()
            && self.lin.iter().chain(&self.h).all(|v| v.is_finite())
            && self.a.as_ref().map_or(true, Matrix::is_finite)
            && self.b.as_ref().map_or(true, |b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DsrlError::non_finite("QP data"));
        }
        Ok(())
    }

    /// `G z − h`.
    pub fn slacks(&self, z: &[f64]) -> Vec<f64> {
        (0..self.h.len()).map(|i| dot(self.g.row(i), z) - self.h[i]).collect()
    }

    /// JSON dump used to reproduce solver failures.
    pub fn to_debug_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_debug_json(s: &str) -> Result<Self> {
        let qp: QpInstance = serde_json::from_str(s)?;
        qp.validate()?;
        Ok(qp)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One constraint in the solver's `nᵀz ≥ d` convention.
struct Con {
    normal: Vec<f64>,
    rhs: f64,
    equality: bool,
}

struct Solver<'a> {
    qp: &'a QpInstance,
    qinv: Matrix,
    qinv_scale: f64,
    cons: Vec<Con>,
    /// Working set (indices into `cons`) and matching multipliers.
    work: Vec<usize>,
    mult: Vec<f64>,
    x: Vec<f64>,
    iterations: usize,
}

enum Step {
    Added,
    Infeasible,
    MaxIter,
}

impl<'a> Solver<'a> {
    fn new(qp: &'a QpInstance) -> Result<Self> {
        let m = qp.num_vars();
        let mut qinv = Matrix::zeros(m, m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let col = solve_linear(&qp.quad, &e).map_err(|_| {
                DsrlError::Argument("Q must be positive definite (singular factorization)".into())
            })?;
            for i in 0..m {
                qinv[(i, j)] = col[i];
            }
        }
        for i in 0..m {
            if qinv[(i, i)] <= 0.0 {
                return Err(DsrlError::Argument("Q must be positive definite".into()));
            }
        }
        let mut cons = Vec::with_capacity(qp.num_eq() + qp.num_ineq());
        if let (Some(a), Some(b)) = (&qp.a, &qp.b) {
            for j in 0..b.len() {
                cons.push(Con { normal: a.row(j).to_vec(), rhs: b[j], equality: true });
            }
        }
        for i in 0..qp.num_ineq() {
            cons.push(Con {
                normal: qp.g.row(i).iter().map(|v| -v).collect(),
                rhs: -qp.h[i],
                equality: false,
            });
        }
        let x = qinv.matvec(&qp.lin)?.into_iter().map(|v| -v).collect();
        let qinv_scale = qinv.max_abs().max(f64::MIN_POSITIVE);
        Ok(Solver { qp, qinv, qinv_scale, cons, work: Vec::new(), mult: Vec::new(), x, iterations: 0 })
    }

    fn slack(&self, c: usize) -> f64 {
        dot(&self.cons[c].normal, &self.x) - self.cons[c].rhs
    }

    /// Primal direction `z = H n⁺` and dual direction `r = N* n⁺` for the
    /// current working set.
    fn directions(&self, normal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let qn = self.qinv.matvec(normal)?;
        if self.work.is_empty() {
            return Ok((qn, Vec::new()));
        }
        let a = self.work.len();
        let qinv_n: Vec<Vec<f64>> =
            self.work.iter().map(|&c| self.qinv.matvec(&self.cons[c].normal)).collect::<Result<_>>()?;
        let mut gram = Matrix::zeros(a, a);
        for i in 0..a {
            for j in 0..a {
                gram[(i, j)] = dot(&self.cons[self.work[i]].normal, &qinv_n[j]);
            }
        }
        let rhs: Vec<f64> = qinv_n.iter().map(|col| dot(col, normal)).collect();
        let r = solve_linear(&gram, &rhs)?;
        let mut z = qn;
        for (col, rj) in qinv_n.iter().zip(&r) {
            for (zi, ci) in z.iter_mut().zip(col) {
                *zi -= rj * ci;
            }
        }
        Ok((z, r))
    }

    fn parallel(&self, z: &[f64], normal: &[f64]) -> bool {
        let nn = dot(normal, normal);
        dot(z, normal).abs() <= 1e-13 * self.qinv_scale * nn.max(f64::MIN_POSITIVE)
    }

    fn add_equalities(&mut self) -> Result<bool> {
        for c in 0..self.cons.len() {
            if !self.cons[c].equality {
                continue;
            }
            let (z, r) = self.directions(&self.cons[c].normal.clone())?;
            let s = self.slack(c);
            if self.parallel(&z, &self.cons[c].normal) {
                if s.abs() <= 1e-9 * (1.0 + self.cons[c].rhs.abs()) {
                    continue; // redundant
                }
                return Ok(false);
            }
            let t = -s / dot(&z, &self.cons[c].normal);
            for (xi, zi) in self.x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for (u, rj) in self.mult.iter_mut().zip(&r) {
                *u -= t * rj;
            }
            self.work.push(c);
            self.mult.push(t);
        }
        Ok(true)
    }

    /// Brings constraint `p` into the working set, dropping blocking
    /// constraints along the way.
    fn add_constraint(&mut self, p: usize) -> Result<Step> {
        let normal = self.cons[p].normal.clone();
        let mut u_p = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > MAX_ITER {
                return Ok(Step::MaxIter);
            }
            let (z, r) = self.directions(&normal)?;
            // partial step: largest dual step keeping working multipliers ≥ 0
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, (&c, &rj)) in self.work.iter().zip(&r).enumerate() {
                if !self.cons[c].equality && rj > 0.0 {
                    let ratio = self.mult[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let t2 = if self.parallel(&z, &normal) {
                f64::INFINITY
            } else {
                -self.slack(p) / dot(&z, &normal)
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(Step::Infeasible);
            }
            if t2.is_finite() {
                for (xi, zi) in self.x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            for (u, rj) in self.mult.iter_mut().zip(&r) {
                *u -= t * rj;
            }
            u_p += t;
            if t2 <= t1 {
                self.work.push(p);
                self.mult.push(u_p);
                return Ok(Step::Added);
            }
            let j = drop.expect("finite t1 has a blocking constraint");
            self.work.remove(j);
            self.mult.remove(j);
        }
    }

    fn most_violated(&self) -> Option<usize> {
        let mut worst = None;
        let mut worst_s = 0.0;
        for c in 0..self.cons.len() {
            if self.cons[c].equality || self.work.contains(&c) {
                continue;
            }
            let s = self.slack(c);
            let tol = 1e-11 * (1.0 + self.cons[c].rhs.abs());
            if s < -tol && s < worst_s {
                worst_s = s;
                worst = Some(c);
            }
        }
        worst
    }

    fn run(mut self) -> Result<QpSolution> {
        let status = if !self.add_equalities()? {
            QpStatus::Infeasible
        } else {
            loop {
                match self.most_violated() {
                    None => break QpStatus::Optimal,
                    Some(p) => match self.add_constraint(p)? {
                        Step::Added => {}
                        Step::Infeasible => break QpStatus::Infeasible,
                        Step::MaxIter => break QpStatus::MaxIter,
                    },
                }
            }
        };
        if status == QpStatus::Optimal {
            self.polish();
        }
        Ok(self.into_solution(status))
    }

    /// Re-solves the equality-constrained KKT system on the final working set
    /// to wash out drift accumulated by the incremental updates.
    fn polish(&mut self) {
        let m = self.x.len();
        let a = self.work.len();
        let mut kkt = Matrix::zeros(m + a, m + a);
        let mut rhs = vec![0.0; m + a];
        for i in 0..m {
            for j in 0..m {
                kkt[(i, j)] = self.qp.quad[(i, j)];
            }
            rhs[i] = -self.qp.lin[i];
        }
        for (j, &c) in self.work.iter().enumerate() {
            for i in 0..m {
                kkt[(i, m + j)] = -self.cons[c].normal[i];
                kkt[(m + j, i)] = self.cons[c].normal[i];
            }
            rhs[m + j] = self.cons[c].rhs;
        }
        let Ok(sol) = solve_linear(&kkt, &rhs) else { return };
        let x = sol[..m].to_vec();
        let u = sol[m..].to_vec();
        let dual_ok = self.work.iter().zip(&u).all(|(&c, &v)| self.cons[c].equality || v >= -1e-12);
        let primal_ok = (0..self.cons.len()).all(|c| {
            self.cons[c].equality || dot(&self.cons[c].normal, &x) - self.cons[c].rhs >= -1e-10
        });
        if dual_ok && primal_ok && x.iter().chain(&u).all(|v| v.is_finite()) {
            self.x = x;
            self.mult = u;
        }
    }

    fn into_solution(self, status: QpStatus) -> QpSolution {
        let p = self.qp.num_eq();
        let mut lambda = vec![0.0; self.qp.num_ineq()];
        let mut nu = vec![0.0; p];
        let mut active_set = Vec::new();
        for (&c, &u) in self.work.iter().zip(&self.mult) {
            if self.cons[c].equality {
                nu[c] = -u;
            } else {
                lambda[c - p] = u.max(0.0);
                active_set.push(c - p);
            }
        }
        active_set.sort_unstable();
        QpSolution { z: self.x, lambda, nu, active_set, status, iterations: self.iterations }
    }
}

/// Solves the QP. Infeasibility and the iteration cap are reported through
/// [`QpSolution::status`]; malformed data is an error.
pub fn solve_qp(qp: &QpInstance) -> Result<QpSolution> {
    qp.validate()?;
    Solver::new(qp)?.run()
}

/// Stationarity, primal feasibility and complementary slackness residuals.
pub fn kkt_residuals(qp: &QpInstance, sol: &QpSolution) -> KktResiduals {
    let mut grad: Vec<f64> = qp.quad.matvec(&sol.z).unwrap_or_else(|_| vec![f64::NAN; qp.num_vars()]);
    for (gi, qi) in grad.iter_mut().zip(&qp.lin) {
        *gi += qi;
    }
    for (i, &l) in sol.lambda.iter().enumerate() {
        for (gj, v) in grad.iter_mut().zip(qp.g.row(i)) {
            *gj += l * v;
        }
    }
    if let Some(a) = &qp.a {
        for (j, &n) in sol.nu.iter().enumerate() {
            for (gi, v) in grad.iter_mut().zip(a.row(j)) {
                *gi += n * v;
            }
        }
    }
    let slacks = qp.slacks(&sol.z);
    let mut primal = slacks.iter().fold(0.0_f64, |m, s| m.max(*s));
    if let (Some(a), Some(b)) = (&qp.a, &qp.b) {
        for j in 0..b.len() {
            primal = primal.max((dot(a.row(j), &sol.z) - b[j]).abs());
        }
    }
    let slackness = sol.lambda.iter().zip(&slacks).fold(0.0_f64, |m, (l, s)| m.max((l * s).abs()));
    KktResiduals { stationarity: norm_inf(&grad), primal, slackness }
}

/// `∂z⋆/∂h` (m×k) by implicit differentiation of the KKT conditions.
///
/// Inactive constraints have zero columns. For strongly active constraints
/// the linearized complementarity rows reduce to `G_S dz = dh_S`, so the
/// solve runs on the active block
///
/// ```text
///     [ Q   G_Sᵀ  Aᵀ ] [dz ]   [  0  ]
///     [ G_S  0    0  ] [dλ ] = [ e_i ]
///     [ A    0    0  ] [dν ]   [  0  ]
/// ```
///
/// which is the full system with the inactive rows eliminated (they force
/// `dλ_i = 0`) and the active rows divided by `λ_i`.
pub fn qp_jacobian_wrt_h(qp: &QpInstance, sol: &QpSolution) -> Result<Matrix> {
    qp.validate()?;
    if sol.status != QpStatus::Optimal {
        return Err(DsrlError::Argument(format!("jacobian needs an optimal solution, got {:?}", sol.status)));
    }
    let m = qp.num_vars();
    let k = qp.num_ineq();
    let p = qp.num_eq();
    if sol.z.len() != m || sol.lambda.len() != k {
        return Err(DsrlError::Shape("solution does not match instance".into()));
    }
    let slacks = qp.slacks(&sol.z);
    let mut active = Vec::new();
    for i in 0..k {
        if sol.lambda[i] > ACTIVE_TOL {
            active.push(i);
        } else if slacks[i].abs() <= WEAK_SLACK_TOL {
            return Err(DsrlError::Degenerate(format!(
                "constraint {i} is weakly active (λ={:.2e}, slack={:.2e})",
                sol.lambda[i], slacks[i]
            )));
        }
    }
    let mut jac = Matrix::zeros(m, k);
    if active.is_empty() {
        return Ok(jac);
    }
    let dim = m + active.len() + p;
    let mut kkt = Matrix::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            kkt[(i, j)] = qp.quad[(i, j)];
        }
    }
    for (r, &c) in active.iter().enumerate() {
        for j in 0..m {
            kkt[(j, m + r)] = qp.g[(c, j)];
            kkt[(m + r, j)] = qp.g[(c, j)];
        }
    }
    if let Some(a) = &qp.a {
        for e in 0..p {
            for j in 0..m {
                kkt[(j, m + active.len() + e)] = a[(e, j)];
                kkt[(m + active.len() + e, j)] = a[(e, j)];
            }
        }
    }
    for (r, &c) in active.iter().enumerate() {
        let mut rhs = vec![0.0; dim];
        rhs[m + r] = 1.0;
        let sol = solve_linear(&kkt, &rhs).map_err(|e| DsrlError::Degenerate(format!("KKT system: {e}")))?;
        for j in 0..m {
            jac[(j, c)] = sol[j];
        }
    }
    Ok(jac)
}

/// Solves and differentiates, retrying once with `h + 1e-9` when the active
/// set is degenerate. The returned solution belongs to whichever instance
/// was differentiated.
pub fn solve_with_jacobian(qp: &QpInstance) -> Result<(QpSolution, Result<Matrix>)> {
    let sol = solve_qp(qp)?;
    if sol.status != QpStatus::Optimal {
        let status = sol.status;
        return Ok((sol, Err(DsrlError::Argument(format!("QP status {status:?}")))));
    }
    match qp_jacobian_wrt_h(qp, &sol) {
        Err(DsrlError::Degenerate(_)) => {
            let mut shifted = qp.clone();
            shifted.h.iter_mut().for_each(|v| *v += RETRY_PERTURBATION);
            let retry = solve_qp(&shifted)?;
            if retry.status != QpStatus::Optimal {
                return Ok((sol, Err(DsrlError::Degenerate("retry lost optimality".into()))));
            }
            let jac = qp_jacobian_wrt_h(&shifted, &retry);
            Ok((retry, jac))
        }
        other => Ok((sol, other)),
    }
}
