use super::Matrix;
use crate::error::{DsrlError, Result};

/// Pivots smaller than this in absolute value mark the system as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves `A x = b` by LU factorization with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(DsrlError::Shape(format!("solve_linear: {}x{} is not square", n, a.cols())));
    }
    if b.len() != n {
        return Err(DsrlError::Shape(format!(
            "solve_linear: rhs length {} for {n}x{n} system",
            b.len()
        )));
    }
    let mut lu = a.data().to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[i * n + k]))
            .max_by(|l, r| l.1.abs().total_cmp(&r.1.abs()))
            .expect("non-empty pivot column");
        if pivot.abs() < PIVOT_TOLERANCE || !pivot.is_finite() {
            return Err(DsrlError::Singular { column: k, pivot });
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let factor = lu[i * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[i * n + k] = factor;
            for j in k + 1..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
            x[i] -= factor * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= lu[k * n + j] * x[j];
        }
        x[k] = s / lu[k * n + k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = [1.5, -2.0, 3.0];
        assert_eq!(solve_linear(&Matrix::identity(3), &b).unwrap(), b.to_vec());
    }

    #[test]
    fn diagonal_system() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(solve_linear(&a, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn needs_pivoting() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(solve_linear(&a, &[3.0, 4.0]).unwrap(), vec![4.0, 3.0]);
    }

    #[test]
    fn random_well_conditioned_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 8;
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = rng.gen_range(-1.0..1.0);
                }
                a[(i, i)] += 4.0;
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = solve_linear(&a, &b).unwrap();
            let ax = a.matvec(&x).unwrap();
            let bnorm = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let res = ax.iter().zip(&b).fold(0.0_f64, |m, (l, r)| m.max((l - r).abs()));
            assert!(res <= 1e-8 * (1.0 + bnorm), "residual {res}");
        }
    }

    #[test]
    fn singular_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(DsrlError::Singular { .. })));
        assert!(matches!(solve_linear(&Matrix::zeros(2, 3), &[1.0, 1.0]), Err(DsrlError::Shape(_))));
    }
}
