//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Set `DSRL_ACCEPTANCE_DIR` to keep the training and evaluation
//! artifacts; otherwise they live in a temporary directory.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use dsrl_cli::{cmd_baseline, cmd_compare, cmd_eval, cmd_train, CompareArgs, EvalArgs, EvalNoise, EvalRecord, RunArgs};
use dsrl_core::adversary::{grad_loss_wrt_omega, loss_from_trajectory, project, AmbiguityBall};
use dsrl_core::cbf::cbf_row;
use dsrl_core::config::RunConfig;
use dsrl_core::ddpg::EpisodeMetrics;
use dsrl_core::diffqp::{kkt_residuals, qp_jacobian_wrt_h, solve_qp, QpStatus};
use dsrl_core::envs::EnvKind;
use dsrl_oracles::barrier::{env_barrier_values, env_conditions, random_state};
use dsrl_oracles::fd;
use dsrl_oracles::fixtures::{qp_rows, random_qp, short_rollout};
use dsrl_oracles::qp::{dual_projected_gradient, strictly_complementary};
use dsrl_oracles::resim::frozen_row_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [EnvKind; 3] = [EnvKind::Dubins1, EnvKind::Dubins2, EnvKind::Quad];

// Criterion thresholds.
const QP_DZ_TOL: f64 = 1e-6;
const QP_KKT_TOL: f64 = 1e-8;
const QP_SECONDS: f64 = 10.0;
const JAC_REL_TOL: f64 = 1e-4;
const JAC_SECONDS: f64 = 30.0;
const BALL_TOL: f64 = 1e-12;
const ADV_REL_TOL: f64 = 1e-3;
const ROW_TOL: f64 = 1e-9;
const ROW_FD_TOL: f64 = 1e-6;
const SAFE_H: f64 = -0.05;
const SAFETY_SEEDS: u64 = 10;
const SAFETY_EPISODES: usize = 5;
const FULL_EPISODES: usize = 300;
const FULL_SEEDS: u64 = 3;
const SEED_MINUTES: f64 = 15.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn qp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_dz, mut worst_kkt, mut negative_lambda, mut not_optimal) = (0.0_f64, 0.0_f64, 0, 0);
    for _ in 0..1000 {
        let qp = random_qp(&mut rng);
        let sol = solve_qp(&qp).expect("valid instance");
        if sol.status != QpStatus::Optimal {
            not_optimal += 1;
            continue;
        }
        let (z_ref, _) = dual_projected_gradient(&qp.lin, &qp_rows(&qp), &qp.h, 200_000);
        let dz: Vec<f64> = sol.z.iter().zip(&z_ref).map(|(a, b)| a - b).collect();
        worst_dz = worst_dz.max(norm_inf(&dz));
        worst_kkt = worst_kkt.max(kkt_residuals(&qp, &sol).max());
        negative_lambda += sol.lambda.iter().filter(|l| **l < 0.0).count();
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_dz <= QP_DZ_TOL && worst_kkt <= QP_KKT_TOL && negative_lambda == 0 && not_optimal == 0 && secs < QP_SECONDS;
    outcome(
        pass,
        format!(
            "1000 instances, max |dz| {worst_dz:.2e} (tol {QP_DZ_TOL:.0e}), max KKT residual {worst_kkt:.2e} (tol {QP_KKT_TOL:.0e}), {secs:.2} s incl. oracle (limit {QP_SECONDS} s)"
        ),
    )
}

fn kkt_jacobian() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut worst) = (0, 0.0_f64);
    while checked < 500 {
        let qp = random_qp(&mut rng);
        let sol = solve_qp(&qp).expect("valid instance");
        if !strictly_complementary(&qp.slacks(&sol.z), &sol.lambda, 1e-4) {
            continue;
        }
        let jac = qp_jacobian_wrt_h(&qp, &sol).expect("non-degenerate");
        let numeric = fd::jacobian(
            |h| {
                let mut p = qp.clone();
                p.h = h.to_vec();
                solve_qp(&p).expect("valid").z
            },
            &qp.h,
            1e-6,
        );
        for (i, row) in numeric.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max(fd::rel_err(jac[(i, j)], *v, 1e-3));
            }
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= JAC_REL_TOL && secs < JAC_SECONDS,
        format!("500 instances, max rel. error {worst:.2e} (tol {JAC_REL_TOL:.0e}), {secs:.2} s (limit {JAC_SECONDS} s)"),
    )
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (mut membership, mut idempotence, mut expansion, mut moved_interior) = (0.0_f64, 0.0_f64, 0.0_f64, 0usize);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=6);
        let ball = AmbiguityBall::new(uniform(&mut rng, n, 3.0), rng.gen_range(1e-3..2.0)).expect("ball");
        let (a, b) = (uniform(&mut rng, n, 10.0), uniform(&mut rng, n, 10.0));
        let (pa, pb) = (project(&a, &ball), project(&b, &ball));
        membership = membership.max(dist(&pa, &ball.center) - ball.radius);
        idempotence = idempotence.max(dist(&project(&pa, &ball), &pa));
        expansion = expansion.max(dist(&pa, &pb) - dist(&a, &b));
        let inside: Vec<f64> = {
            let dir = uniform(&mut rng, n, 1.0);
            let scale = rng.gen_range(0.0..1.0) * ball.radius / dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            ball.center.iter().zip(&dir).map(|(c, d)| c + scale * d).collect()
        };
        if dist(&inside, &ball.center) <= ball.radius && project(&inside, &ball) != inside {
            moved_interior += 1;
        }
    }
    outcome(
        membership <= BALL_TOL && idempotence <= BALL_TOL && expansion <= BALL_TOL && moved_interior == 0,
        format!(
            "10000 cases, membership excess {membership:.1e}, idempotence drift {idempotence:.1e}, expansion {expansion:.1e} (tol {BALL_TOL:.0e}), moved interior points {moved_interior}"
        ),
    )
}

fn adversary_gradient() -> Outcome {
    let gamma = 0.99;
    let mut details = Vec::new();
    let mut pass = true;
    for kind in KINDS {
        let (mut checked, mut seed, mut worst) = (0, 0, 0.0_f64);
        while checked < 50 {
            seed += 1;
            let (_, model, traj, _) = short_rollout(kind, seed, 3);
            let usable = traj.len() == 3
                && traj.aborted.is_none()
                && traj.qp_fallbacks == 0
                && traj.jacobian_failures == 0
                && traj.safety_qps.iter().all(|sq| {
                    let sol = solve_qp(&sq.qp).expect("valid");
                    strictly_complementary(&sq.qp.slacks(&sol.z), &sol.lambda, 1e-4)
                });
            if !usable {
                continue;
            }
            let grad = grad_loss_wrt_omega(&traj, &model, gamma).expect("recorded jacobians");
            let n = model.n();
            let base = frozen_row_loss(&traj, &model, &vec![0.0; n], gamma);
            assert!((base - loss_from_trajectory(&traj, gamma)).abs() <= 1e-9 * (1.0 + base.abs()));
            let numeric = fd::gradient(|d| frozen_row_loss(&traj, &model, d, gamma), &vec![0.0; n], 1e-5);
            let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            worst = worst.max(norm_inf(&diff) / norm_inf(&numeric).max(1e-8));
            checked += 1;
        }
        pass &= worst <= ADV_REL_TOL;
        details.push(format!("{kind} {worst:.1e}"));
    }
    outcome(pass, format!("50 three-step rollouts per env, max rel. error {} (tol {ADV_REL_TOL:.0e})", details.join(", ")))
}

fn cbf_rows() -> Outcome {
    let (k1, k2) = (1.0, 1.0);
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
    let mut failures = Vec::new();
    let (mut worst_value, mut worst_fd) = (0.0_f64, 0.0_f64);
    for kind in KINDS {
        let model = default_config(kind).env_model().expect("defaults");
        let barriers = model.barriers(k1, k2);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + kind as u64);
        for _ in 0..1000 {
            let x = random_state(&model, &mut rng);
            let u = uniform(&mut rng, model.m(), 2.0);
            let w = uniform(&mut rng, model.n(), 0.5);
            let direct = env_conditions(&model, &x, &u, &w, k1, k2);
            for (b, (spec, h)) in barriers.iter().zip(env_barrier_values(&model, &x)).enumerate() {
                let row = cbf_row(spec, &model, &x, &w).expect("row");
                let got = row.eval(&u, &w);
                worst_value = worst_value.max((spec.barrier.value(&x) - h).abs()).max((got - direct[b]).abs());
                if !close(spec.barrier.value(&x), h, ROW_TOL) || !close(got, direct[b], ROW_TOL) {
                    failures.push(format!("{kind} value"));
                }
                let checks = [
                    (spec.barrier.gradient(&x), fd::gradient(|y| spec.barrier.value(y), &x, 1e-6)),
                    (row.a_u.clone(), fd::gradient(|v| env_conditions(&model, &x, v, &w, k1, k2)[b], &u, 1e-6)),
                    (row.db_domega.clone(), fd::gradient(|v| env_conditions(&model, &x, &u, v, k1, k2)[b], &w, 1e-6)),
                ];
                for (analytic, numeric) in checks {
                    for (a, e) in analytic.iter().zip(&numeric) {
                        worst_fd = worst_fd.max((a - e).abs() / (1.0 + a.abs()));
                        if !close(*a, *e, ROW_FD_TOL) {
                            failures.push(format!("{kind} gradient"));
                        }
                    }
                }
            }
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        format!(
            "1000 points per env, max value gap {worst_value:.1e} (tol {ROW_TOL:.0e}), max gradient gap {worst_fd:.1e} (tol {ROW_FD_TOL:.0e}){}",
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(", ")) }
        ),
    )
}

fn default_config(kind: EnvKind) -> RunConfig {
    RunConfig::from_toml_str(&default_document(kind, None)).expect("default document")
}

/// The smallest user document for `kind`: everything else is a default.
fn default_document(kind: EnvKind, episodes: Option<usize>) -> String {
    let mut doc = format!("env = \"{}\"\n", kind.name());
    if let Some(e) = episodes {
        doc.push_str(&format!("episodes = {e}\n"));
    }
    if kind == EnvKind::Quad {
        doc.push_str("[environment]\nglide_slope_deg = 45.0\n");
    }
    doc
}

struct Workspace {
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

impl Workspace {
    fn new() -> Self {
        match std::env::var_os("DSRL_ACCEPTANCE_DIR") {
            Some(dir) => {
                let root = PathBuf::from(dir);
                fs::create_dir_all(&root).expect("acceptance dir");
                Workspace { root, _tmp: None }
            }
            None => {
                let tmp = tempfile::TempDir::new().expect("temp dir");
                Workspace { root: tmp.path().to_path_buf(), _tmp: Some(tmp) }
            }
        }
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let path = self.root.join(name);
        fs::write(&path, body).expect("write config");
        path
    }
}

fn run(cmd: &str, config: &Path, seed: u64, out: PathBuf) -> (Vec<EpisodeMetrics>, PathBuf) {
    let args = RunArgs { config: config.to_path_buf(), seed: Some(seed), out: Some(out), checkpoint_every: None };
    let summary = if cmd == "train" { cmd_train(&args) } else { cmd_baseline(&args) }.expect("training run");
    (summary.metrics, summary.final_checkpoint)
}

fn eval(checkpoint: &Path, config: &Path, seed: u64, omega_from: Option<PathBuf>, out: PathBuf) -> EvalRecord {
    let args = EvalArgs {
        checkpoint: checkpoint.to_path_buf(),
        config: config.to_path_buf(),
        noise: EvalNoise::Worst,
        seeds: vec![seed],
        out: Some(out),
        omega_from,
    };
    cmd_eval(&args).expect("evaluation").remove(0)
}

fn safety_invariant(ws: &Workspace) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for kind in KINDS {
        let cfg = ws.config(&format!("safety_{}.toml", kind.name()), &default_document(kind, Some(SAFETY_EPISODES)));
        let (mut worst, mut fallbacks, mut train_fallbacks) = (f64::INFINITY, 0, 0);
        for seed in 0..SAFETY_SEEDS {
            let dir = ws.root.join(format!("safety_{}_s{seed}", kind.name()));
            let (metrics, ck) = run("train", &cfg, seed, dir.join("train"));
            train_fallbacks += metrics.iter().map(|m| m.qp_fallbacks).sum::<usize>();
            let rec = eval(&ck, &cfg, seed, None, dir.join("eval_worst"));
            worst = worst.min(rec.min_h);
            fallbacks += rec.qp_fallbacks;
        }
        pass &= worst >= SAFE_H && fallbacks == 0 && train_fallbacks == 0;
        details.push(format!("{kind} min h {worst:.4}, fallbacks {fallbacks} eval / {train_fallbacks} train"));
    }
    outcome(
        pass,
        format!(
            "{SAFETY_SEEDS} seeds x {SAFETY_EPISODES}-episode dsrl runs, worst-case eval: {} (need min h >= {SAFE_H})",
            details.join("; ")
        ),
    )
}

struct FullRuns {
    dubins1_dsrl: Vec<Vec<EpisodeMetrics>>,
    dubins2_dsrl: Vec<Vec<EpisodeMetrics>>,
}

fn qualitative_safety(ws: &Workspace) -> (Outcome, Vec<Vec<EpisodeMetrics>>) {
    let cfg = ws.config("full_dubins1.toml", &default_document(EnvKind::Dubins1, Some(FULL_EPISODES)));
    let (mut base_h, mut dsrl_h, mut minutes, mut dsrl_metrics) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..FULL_SEEDS {
        let start = Instant::now();
        let dir = ws.root.join(format!("full_dubins1_s{seed}"));
        let (dm, dck) = run("train", &cfg, seed, dir.join("dsrl"));
        let (_, bck) = run("baseline", &cfg, seed, dir.join("baseline"));
        let b = eval(&bck, &cfg, seed, Some(dck.clone()), dir.join("eval_baseline_worst"));
        let d = eval(&dck, &cfg, seed, None, dir.join("eval_dsrl_worst"));
        base_h.push(b.min_h);
        dsrl_h.push(d.min_h);
        minutes.push(start.elapsed().as_secs_f64() / 60.0);
        dsrl_metrics.push(dm);
    }
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.*}", p)).collect::<Vec<_>>().join(", ");
    let pass = base_h.iter().any(|h| *h < 0.0)
        && dsrl_h.iter().all(|h| *h > 0.0)
        && minutes.iter().all(|m| *m < SEED_MINUTES);
    (
        outcome(
            pass,
            format!(
                "dubins1, {FULL_EPISODES} episodes, seeds 0..{FULL_SEEDS}: baseline min h under learned omega [{}], dsrl min h [{}], minutes per seed (dsrl + baseline + evals) [{}]",
                fmt(&base_h, 4),
                fmt(&dsrl_h, 4),
                fmt(&minutes, 1)
            ),
        ),
        dsrl_metrics,
    )
}

fn reward_trend(runs: &FullRuns) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (kind, set) in [(EnvKind::Dubins1, &runs.dubins1_dsrl), (EnvKind::Dubins2, &runs.dubins2_dsrl)] {
        pass &= set.len() == FULL_SEEDS as usize;
        for (seed, metrics) in set.iter().enumerate() {
            let tenth = (metrics.len() / 10).max(1);
            let mean = |s: &[EpisodeMetrics]| s.iter().map(|m| m.episode_return).sum::<f64>() / s.len() as f64;
            let (first, last) = (mean(&metrics[..tenth]), mean(&metrics[metrics.len() - tenth..]));
            pass &= metrics.len() == FULL_EPISODES && last > first;
            details.push(format!("{kind} s{seed} {first:.1} -> {last:.1}"));
        }
    }
    outcome(pass, format!("mean return first 10% -> last 10%: {}", details.join(", ")))
}

fn determinism(ws: &Workspace) -> Outcome {
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for kind in KINDS {
        let mut doc = format!("env = \"{}\"\nepisodes = 4\n[environment]\nhorizon = 60\n", kind.name());
        if kind == EnvKind::Quad {
            doc.push_str("glide_slope_deg = 45.0\n");
        }
        doc.push_str("[ddpg]\nactor_hidden = [32]\ncritic_hidden = [32]\nbatch_size = 16\n");
        let cfg = ws.config(&format!("det_{}.toml", kind.name()), &doc);
        for cmd in ["train", "baseline"] {
            let dirs: Vec<PathBuf> = (0..2).map(|r| ws.root.join(format!("det_{}_{cmd}_{r}", kind.name()))).collect();
            for d in &dirs {
                run(cmd, &cfg, 11, d.clone());
            }
            let read = |d: &PathBuf, f: &str| fs::read(d.join(f)).expect("output file");
            compared += 1;
            if read(&dirs[0], "metrics.jsonl") != read(&dirs[1], "metrics.jsonl") {
                mismatches.push(format!("{kind} {cmd} metrics"));
            }
            if cmd == "train" {
                for noise in [EvalNoise::Worst, EvalNoise::Sample] {
                    let outs: Vec<PathBuf> = (0..2).map(|r| dirs[0].join(format!("eval_{noise}_{r}"))).collect();
                    for o in &outs {
                        let args = EvalArgs {
                            checkpoint: dirs[0].join("checkpoint.json"),
                            config: cfg.clone(),
                            noise,
                            seeds: vec![0, 1, 2],
                            out: Some(o.clone()),
                            omega_from: None,
                        };
                        cmd_eval(&args).expect("evaluation");
                    }
                    compared += 1;
                    if read(&outs[0], "summary.csv") != read(&outs[1], "summary.csv") {
                        mismatches.push(format!("{kind} eval {noise}"));
                    }
                }
                let outs: Vec<PathBuf> = (0..2).map(|r| ws.root.join(format!("det_{}_compare_{r}", kind.name()))).collect();
                for o in &outs {
                    cmd_compare(&CompareArgs { runs: dirs.clone(), out: o.clone() }).expect("compare");
                }
                compared += 1;
                if read(&outs[0], "returns.csv") != read(&outs[1], "returns.csv") {
                    mismatches.push(format!("{kind} compare"));
                }
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{compared} repeated commands, byte-identical outputs{}",
            if mismatches.is_empty() { String::new() } else { format!(" except {}", mismatches.join(", ")) }
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("aborted: {msg}"))
        }
    }
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!("[{}] {id}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    let ws = Workspace::new();
    let mut all = true;
    let mut record = |id: usize, name: &str, o: Outcome| {
        report(id, name, &o);
        all &= o.pass;
    };
    record(1, "QP oracle equivalence", guarded(qp_oracle));
    record(2, "KKT differentiation", guarded(kkt_jacobian));
    record(3, "Ball projection", guarded(projection));
    record(4, "Adversary gradient", guarded(adversary_gradient));
    record(5, "CBF row correctness", guarded(cbf_rows));
    record(6, "Safety invariant", guarded(|| safety_invariant(&ws)));

    let mut dubins1 = Vec::new();
    let c7 = guarded(|| {
        let (o, m) = qualitative_safety(&ws);
        dubins1 = m;
        o
    });
    record(7, "Worst-case safety, baseline vs dsrl", c7);
    let c8 = guarded(|| {
        let cfg = ws.config("full_dubins2.toml", &default_document(EnvKind::Dubins2, Some(FULL_EPISODES)));
        let dubins2 = (0..FULL_SEEDS)
            .map(|seed| run("train", &cfg, seed, ws.root.join(format!("full_dubins2_s{seed}"))).0)
            .collect();
        reward_trend(&FullRuns { dubins1_dsrl: std::mem::take(&mut dubins1), dubins2_dsrl: dubins2 })
    });
    record(8, "Return trend", c8);
    record(9, "Determinism", guarded(|| determinism(&ws)));

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
