//! Accelerated projected gradient on the dual of
//! `min ‖z‖² + q·z  s.t.  G z ≤ h` (objective Hessian `2I`).
//!
//! The dual is `max_{λ≥0} −¼‖q + Gᵀλ‖² − h·λ`, whose projection is a clamp at
//! zero; the primal point is `z(λ) = −(q + Gᵀλ)/2`.

fn primal(q: &[f64], g: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = q.iter().map(|v| -0.5 * v).collect();
    for (row, l) in g.iter().zip(lambda) {
        for (zi, gi) in z.iter_mut().zip(row) {
            *zi -= 0.5 * l * gi;
        }
    }
    z
}

fn dual_value(q: &[f64], g: &[Vec<f64>], h: &[f64], lambda: &[f64]) -> f64 {
    let z = primal(q, g, lambda);
    -z.iter().map(|v| v * v).sum::<f64>() - h.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>()
}

/// Returns `(z, λ)` from at most `max_iter` restarted FISTA iterations.
/// Every `POLISH_EVERY` iterations the identified support is polished, and
/// the polished point is returned once it satisfies KKT exactly (feasible,
/// `λ ≥ 0`, complementary by construction).
pub fn dual_projected_gradient(q: &[f64], g: &[Vec<f64>], h: &[f64], max_iter: usize) -> (Vec<f64>, Vec<f64>) {
    let (z, lambda) = dual_fista(q, g, h, max_iter, &mut |z, lambda| try_polish(q, g, h, z, lambda));
    try_polish(q, g, h, &z, &lambda).unwrap_or((z, lambda))
}

const POLISH_EVERY: usize = 500;

fn try_polish(q: &[f64], g: &[Vec<f64>], h: &[f64], z: &[f64], lambda: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let by_lambda: Vec<usize> = (0..g.len()).filter(|&i| lambda[i] > 0.0).collect();
    let by_slack: Vec<usize> = (0..g.len()).filter(|&i| dot(&g[i], &z) - h[i] > -1e-6).collect();
    [by_lambda, by_slack].iter().find_map(|support| polish(q, g, h, support))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Equality-constrained solve on `support`: `M λ_S = −2h_S − G_S q` with
/// `M = G_S G_Sᵀ`, by full-pivot elimination; dependent rows get `λ = 0`.
fn polish(q: &[f64], g: &[Vec<f64>], h: &[f64], support: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    let s = support.len();
    let mut m: Vec<Vec<f64>> = support
        .iter()
        .map(|&i| support.iter().map(|&j| dot(&g[i], &g[j])).collect())
        .collect();
    let mut rhs: Vec<f64> = support.iter().map(|&i| -2.0 * h[i] - dot(&g[i], q)).collect();
    let scale = m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let mut col_of = vec![usize::MAX; s];
    let mut used_row = vec![false; s];
    let mut used_col = vec![false; s];
    for _ in 0..s {
        let mut best = (0.0, 0, 0);
        for r in (0..s).filter(|&r| !used_row[r]) {
            for c in (0..s).filter(|&c| !used_col[c]) {
                if m[r][c].abs() > best.0 {
                    best = (m[r][c].abs(), r, c);
                }
            }
        }
        let (piv, r, c) = best;
        if piv <= 1e-12 * scale {
            break;
        }
        used_row[r] = true;
        used_col[c] = true;
        col_of[r] = c;
        for other in 0..s {
            if other != r && m[other][c] != 0.0 {
                let f = m[other][c] / m[r][c];
                for k in 0..s {
                    m[other][k] -= f * m[r][k];
                }
                rhs[other] -= f * rhs[r];
            }
        }
    }
    let mut lambda = vec![0.0; g.len()];
    for r in (0..s).filter(|&r| used_row[r]) {
        let c = col_of[r];
        lambda[support[c]] = rhs[r] / m[r][c];
    }
    let z = primal(q, g, &lambda);
    let tol = 1e-10 * (1.0 + h.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
    let feasible = g.iter().zip(h).all(|(row, hi)| dot(row, &z) - hi <= tol);
    let tight = support.iter().all(|&i| (dot(&g[i], &z) - h[i]).abs() <= tol);
    let dual_ok = lambda.iter().all(|&l| l >= -1e-12);
    (feasible && tight && dual_ok).then_some((z, lambda))
}

type Polisher<'a> = dyn FnMut(&[f64], &[f64]) -> Option<(Vec<f64>, Vec<f64>)> + 'a;

fn dual_fista(q: &[f64], g: &[Vec<f64>], h: &[f64], max_iter: usize, polish: &mut Polisher<'_>) -> (Vec<f64>, Vec<f64>) {
    let k = g.len();
    let frob: f64 = g.iter().flatten().map(|v| v * v).sum();
    if k == 0 || frob == 0.0 {
        return (primal(q, g, &vec![0.0; k]), vec![0.0; k]);
    }
    let step = 2.0 / frob;
    let mut lambda = vec![0.0; k];
    let mut y = lambda.clone();
    let mut t = 1.0_f64;
    let mut best = dual_value(q, g, h, &lambda);
    for iter in 1..=max_iter {
        if iter % POLISH_EVERY == 0 {
            if let Some(done) = polish(&primal(q, g, &lambda), &lambda) {
                return done;
            }
        }
        let z = primal(q, g, &y);
        let next: Vec<f64> = (0..k)
            .map(|i| {
                let grad = g[i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() - h[i];
                (y[i] + step * grad).max(0.0)
            })
            .collect();
        let value = dual_value(q, g, h, &next);
        if value < best {
            // adaptive restart
            t = 1.0;
            y.clone_from(&lambda);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let moved = next.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next.iter().zip(&lambda).map(|(n, l)| n + momentum * (n - l)).collect();
        lambda = next;
        best = value;
        t = t_next;
        if moved < 1e-16 {
            break;
        }
    }
    (primal(q, g, &lambda), lambda)
}

/// Max-min-margin point over a 2-D box by exhaustive grid search.
/// Rows are `(a, b)` with margin `a·u + b`.
pub fn grid_max_min_margin(rows: &[(Vec<f64>, f64)], lo: [f64; 2], hi: [f64; 2], points: usize) -> ([f64; 2], f64) {
    let mut best = ([lo[0], lo[1]], f64::NEG_INFINITY);
    for i in 0..points {
        for j in 0..points {
            let u = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (points - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (points - 1) as f64,
            ];
            let margin = rows
                .iter()
                .map(|(a, b)| a[0] * u[0] + a[1] * u[1] + b)
                .fold(f64::INFINITY, f64::min);
            if margin > best.1 {
                best = (u, margin);
            }
        }
    }
    best
}

/// True when every row is clearly active (`λ > margin`) or clearly slack.
pub fn strictly_complementary(slacks: &[f64], lambda: &[f64], margin: f64) -> bool {
    slacks.iter().zip(lambda).all(|(s, l)| *l > margin || *s < -margin)
}
