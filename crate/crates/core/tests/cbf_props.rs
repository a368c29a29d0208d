use dsrl_core::cbf::{
    assemble_safety_qp, average_row, cbf_row, cbf_row_deg1, fallback_action, min_margin, Barrier, BarrierSpec,
    SafetyRow,
};
use dsrl_core::config::RunConfig;
use dsrl_core::diffqp::{solve_qp, QpStatus};
use dsrl_core::envs::{EnvKind, EnvModel};
use dsrl_oracles::barrier::{
    dubins2_psi1, dubins2_psi2, dubins2_psi2_fd, env_barrier_values, env_conditions, random_state,
};
use dsrl_oracles::fd;
use dsrl_oracles::fixtures::{near_boundary_state, qp_rows};
use dsrl_oracles::qp::{dual_projected_gradient, grid_max_min_margin};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K1: f64 = 1.3;
const K2: f64 = 0.7;

fn model(kind: EnvKind) -> EnvModel {
    RunConfig::default_for(kind).env_model().unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn obstacle(model: &EnvModel) -> ([f64; 2], f64) {
    match model.geometry {
        dsrl_core::envs::Geometry::Obstacle { center, radius } => (center, radius),
        _ => unreachable!(),
    }
}

fn direct_conditions(model: &EnvModel, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
    env_conditions(model, x, u, w, K1, K2)
}

fn rows_at(model: &EnvModel, x: &[f64], omega_ref: &[f64]) -> Vec<SafetyRow> {
    model.barriers(K1, K2).iter().map(|s| cbf_row(s, model, x, omega_ref).unwrap()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn disk_row_at_origin() {
    let spec = BarrierSpec::new(Barrier::Disk { center: vec![3.0, 4.0], radius: 1.0, channels: vec![0, 1] }, 1, K1, K2);
    let row = cbf_row_deg1(&spec, &model(EnvKind::Dubins1), &[0.0, 0.0, 0.0]).unwrap();
    assert!((row.b0 - 24.0 * K1).abs() < 1e-12);
    assert_eq!(row.db_domega, vec![-6.0, -8.0, 0.0]);
    assert_eq!(row.a_u, vec![-6.0, -8.0, 0.0]);
}

#[test]
fn rows_reconstruct_direct_conditions() {
    for kind in [EnvKind::Dubins1, EnvKind::Dubins2, EnvKind::Quad] {
        let model = model(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 10);
        for _ in 0..1000 {
            let x = random_state(&model, &mut rng);
            let u = uniform(&mut rng, model.m(), 2.0);
            let w = uniform(&mut rng, model.n(), 0.5);
            for (spec, h) in model.barriers(K1, K2).iter().zip(env_barrier_values(&model, &x)) {
                assert!(close(spec.barrier.value(&x), h, 1e-9), "{kind} h");
            }
            // degree-2 rows are exact at their reference noise
            let rows = rows_at(&model, &x, &w);
            for (row, want) in rows.iter().zip(direct_conditions(&model, &x, &u, &w)) {
                assert!(close(row.eval(&u, &w), want, 1e-9), "{kind}: row {} vs direct {want}", row.eval(&u, &w));
            }
        }
    }
}

#[test]
fn dubins2_hand_psi2_matches_differentiated_psi1() {
    let model = model(EnvKind::Dubins2);
    let (c, r) = obstacle(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x = random_state(&model, &mut rng);
        let u = uniform(&mut rng, 3, 2.0);
        let w = uniform(&mut rng, 6, 0.5);
        let a = dubins2_psi2(&x, &u, &w, c, r, K1, K2);
        let b = dubins2_psi2_fd(&x, &u, &w, c, r, K1, K2);
        assert!(close(a, b, 1e-9), "{a} vs {b}");
        assert!(dubins2_psi1(&x, &w, c, r, K1).is_finite());
    }
}

#[test]
fn row_coefficients_match_finite_differences() {
    for kind in [EnvKind::Dubins1, EnvKind::Dubins2, EnvKind::Quad] {
        let model = model(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 20);
        for _ in 0..200 {
            let x = random_state(&model, &mut rng);
            let u = uniform(&mut rng, model.m(), 2.0);
            let w = uniform(&mut rng, model.n(), 0.5);
            let rows = rows_at(&model, &x, &w);
            for (b, (spec, row)) in model.barriers(K1, K2).iter().zip(&rows).enumerate() {
                let grad_fd = fd::gradient(|y| spec.barrier.value(y), &x, 1e-6);
                let du_fd = fd::gradient(|v| direct_conditions(&model, &x, v, &w)[b], &u, 1e-6);
                let dw_fd = fd::gradient(|v| direct_conditions(&model, &x, &u, v)[b], &w, 1e-6);
                for (a, e) in spec.barrier.gradient(&x).iter().zip(&grad_fd) {
                    assert!(close(*a, *e, 1e-6), "{kind} ∇h {a} vs {e}");
                }
                for (a, e) in row.a_u.iter().zip(&du_fd) {
                    assert!(close(*a, *e, 1e-6), "{kind} a_u {a} vs {e}");
                }
                for (a, e) in row.db_domega.iter().zip(&dw_fd) {
                    assert!(close(*a, *e, 1e-6), "{kind} db {a} vs {e}");
                }
            }
        }
    }
}

#[test]
fn averaged_row_equals_brute_force_average() {
    for kind in [EnvKind::Dubins1, EnvKind::Dubins2, EnvKind::Quad] {
        let model = model(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 30);
        for _ in 0..200 {
            let x = random_state(&model, &mut rng);
            let u = uniform(&mut rng, model.m(), 2.0);
            let samples: Vec<Vec<f64>> = (0..8).map(|_| uniform(&mut rng, model.n(), 0.5)).collect();
            for row in rows_at(&model, &x, &vec![0.0; model.n()]) {
                let brute = samples.iter().map(|s| row.eval(&u, s)).sum::<f64>() / samples.len() as f64;
                let avg = average_row(&row, &samples).unwrap();
                let zero = vec![0.0; model.n()];
                assert!(close(avg.eval(&u, &zero), brute, 1e-12));
                assert_eq!(avg.a_u, row.a_u);
            }
        }
    }
}

#[test]
fn assembled_program_matches_hand_layout_and_oracle() {
    let model = model(EnvKind::Dubins1);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..300 {
        let x = near_boundary_state(&model, &mut rng);
        let w = uniform(&mut rng, 3, 0.2);
        let u_rl = uniform(&mut rng, 3, 1.5);
        let rows = rows_at(&model, &x, &w);
        let sq = assemble_safety_qp(&u_rl, &model.u_lo, &model.u_hi, &rows, &w).unwrap();
        let g = qp_rows(&sq.qp);
        let mut want_g = vec![rows[0].a_u.iter().map(|a| -a).collect::<Vec<f64>>()];
        let mut want_h = vec![rows[0].eval(&[0.0; 3], &w)];
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            want_g.push(e.clone());
            want_h.push(model.u_hi[j]);
            want_g.push(e.iter().map(|v| -v).collect());
            want_h.push(-model.u_lo[j]);
        }
        assert_eq!(g, want_g);
        for (a, b) in sq.qp.h.iter().zip(&want_h) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(sq.h_omega.row(0), rows[0].db_domega.as_slice());
        assert!(sq.h_omega.row(1).iter().all(|v| *v == 0.0));
        let sol = solve_qp(&sq.qp).unwrap();
        if sol.status == QpStatus::Optimal {
            assert!(min_margin(&rows, &sol.z, &w) >= -1e-9);
            let (z_ref, _) = dual_projected_gradient(&sq.qp.lin, &g, &sq.qp.h, 200_000);
            for (a, b) in sol.z.iter().zip(&z_ref) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn fallback_maximizes_min_margin_like_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (lo, hi) = ([-1.0, -1.0], [1.0, 1.0]);
    for _ in 0..20 {
        // three random rows that cannot all hold: the last contradicts the first
        let a0 = uniform(&mut rng, 2, 1.0);
        let a1 = uniform(&mut rng, 2, 1.0);
        let rows = vec![
            SafetyRow { a_u: a0.clone(), b0: rng.gen_range(-2.0..-0.5), db_domega: vec![0.0] },
            SafetyRow { a_u: a1, b0: rng.gen_range(-1.0..1.0), db_domega: vec![0.0] },
            SafetyRow { a_u: a0.iter().map(|v| -v).collect(), b0: rng.gen_range(-2.0..-0.5), db_domega: vec![0.0] },
        ];
        let u = fallback_action(&rows, &lo, &hi, &[0.0], &[]).unwrap();
        let got = min_margin(&rows, &u, &[0.0]);
        let oracle_rows: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.a_u.clone(), r.b0)).collect();
        let (_, best) = grid_max_min_margin(&oracle_rows, lo, hi, 201);
        assert!(got >= best - 1e-5, "fallback margin {got} below grid {best}");
        assert!(got <= best + 0.03, "fallback margin {got} far above grid {best}");
        assert!(u.iter().zip(&lo).zip(&hi).all(|((v, l), h)| v >= l && v <= h));
    }
}

#[test]
fn fine_step_rectified_rollouts_stay_safe() {
    for kind in [EnvKind::Dubins1, EnvKind::Dubins2, EnvKind::Quad] {
        let mut model = model(kind);
        model.dt = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 60);
        let mut worst = f64::INFINITY;
        for _ in 0..20 {
            let w = uniform(&mut rng, model.n(), 0.1);
            // the degree-2 guarantee needs ψ₁ ≥ 0 at the start as well
            let mut x = near_boundary_state(&model, &mut rng);
            while kind == EnvKind::Dubins2 && {
                let (c, r) = obstacle(&model);
                dubins2_psi1(&x, &w, c, r, K1) < 0.0
            } {
                x = near_boundary_state(&model, &mut rng);
            }
            let push = uniform(&mut rng, model.m(), 1.0);
            for _ in 0..300 {
                let rows = rows_at(&model, &x, &w);
                let sq = assemble_safety_qp(&push, &model.u_lo, &model.u_hi, &rows, &w).unwrap();
                let sol = solve_qp(&sq.qp).unwrap();
                if sol.status != QpStatus::Optimal {
                    break;
                }
                x = model.step(&x, &sol.z, &w).unwrap();
                worst = worst.min(model.safety_value(&x));
            }
        }
        assert!(worst >= -1e-2, "{kind}: min h {worst}");
    }
}

proptest! {
    #[test]
    fn row_is_affine_in_noise(seed in 0u64..1_000_000, t in -2.0f64..2.0) {
        let model = model(EnvKind::Dubins1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_state(&model, &mut rng);
        let u = uniform(&mut rng, 3, 1.0);
        let (w1, w2) = (uniform(&mut rng, 3, 1.0), uniform(&mut rng, 3, 1.0));
        let row = &rows_at(&model, &x, &w1)[0];
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + t * (b - a)).collect();
        let lhs = row.eval(&u, &mix);
        let rhs = row.eval(&u, &w1) + t * (row.eval(&u, &w2) - row.eval(&u, &w1));
        prop_assert!(close(lhs, rhs, 1e-10));
    }
}
