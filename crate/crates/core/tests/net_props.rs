use dsrl_core::net::{solve_linear, Activation, Adam, AdamState, GradBundle, Matrix, MlpParams, OutputActivation};
use dsrl_core::DsrlError;
use dsrl_oracles::fd;
use dsrl_oracles::nets::{flatten, straight_line_forward, unflatten, ScriptedAdam};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng) -> MlpParams {
    let depth = rng.gen_range(1..=3);
    let mut sizes = vec![rng.gen_range(1..=8)];
    for _ in 1..depth {
        sizes.push(rng.gen_range(1..=16));
    }
    let out = rng.gen_range(1..=4);
    sizes.push(out);
    let hidden = if rng.gen_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let head = if rng.gen_bool(0.5) {
        OutputActivation::Identity
    } else {
        let lower: Vec<f64> = (0..out).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let upper = lower.iter().map(|l| l + rng.gen_range(0.5..3.0)).collect();
        OutputActivation::ScaledTanh { lower, upper }
    };
    MlpParams::init(&sizes, hidden, head, 0.5, rng).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-7
}

#[test]
fn backprop_matches_central_differences_on_100_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_size()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let up: Vec<f64> = (0..net.output_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &up).unwrap();
        let objective = |p: &MlpParams, input: &[f64]| -> f64 {
            p.predict(input).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let theta = flatten(&net);
        let fd_params = fd::gradient(
            |t| {
                let mut p = net.clone();
                unflatten(&mut p, t);
                objective(&p, &x)
            },
            &theta,
            1e-6,
        );
        let mut analytic = Vec::new();
        for l in 0..net.num_layers() {
            analytic.extend_from_slice(grads.weights[l].data());
            analytic.extend_from_slice(&grads.biases[l]);
        }
        let fd_input = fd::gradient(|xi| objective(&net, xi), &x, 1e-6);
        for (a, b) in analytic.iter().zip(&fd_params).chain(grads.input_grad_vec().iter().zip(&fd_input)) {
            assert!(close(*a, *b), "analytic {a} vs fd {b}");
            worst = worst.max(fd::rel_err(*a, *b, 1e-3));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn forward_matches_straight_line_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_size()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = net.predict(&x).unwrap();
        let want = straight_line_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = random_net(&mut rng);
    let x: Vec<f64> = (0..net.input_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = net.predict(&x).unwrap();
    let b = net.clone().predict(&x).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn scaled_tanh_respects_bounds(scale in -1e6f64..1e6, x in prop::collection::vec(-1e6f64..1e6, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(scale.to_bits());
        let mut net = MlpParams::init(
            &[3, 5, 2],
            Activation::Tanh,
            OutputActivation::ScaledTanh { lower: vec![-1.0, 0.5], upper: vec![1.0, 0.75] },
            1.0,
            &mut rng,
        ).unwrap();
        for v in net.weights_mut()[1].data_mut() {
            *v *= scale;
        }
        let y = net.predict(&x).unwrap();
        prop_assert!(y[0] > -1.0 && y[0] < 1.0);
        prop_assert!(y[1] > 0.5 && y[1] < 0.75);
    }

    #[test]
    fn lu_residual_small(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 8;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = solve_linear(&a, &b).unwrap();
        let r = a.matvec(&x).unwrap();
        let b_inf = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let res = r.iter().zip(&b).fold(0.0_f64, |m, (ri, bi)| m.max((ri - bi).abs()));
        prop_assert!(res <= 1e-8 * (1.0 + b_inf));
    }
}

fn tiny_net() -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    MlpParams::init(&[2, 3, 1], Activation::Tanh, OutputActivation::Identity, 0.5, &mut rng).unwrap()
}

fn random_grads(net: &MlpParams, rng: &mut ChaCha8Rng) -> GradBundle {
    let mut g = GradBundle::zeros_like(net);
    for w in &mut g.weights {
        w.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    for b in &mut g.biases {
        b.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    g
}

#[test]
fn adam_zero_gradient_keeps_params_and_decays_moments() {
    let mut net = tiny_net();
    let before = net.clone();
    let mut state = AdamState::new(&net);
    state.m_b[0][0] = 1.0;
    state.v_b[0][0] = 1.0;
    Adam::default().step(&mut net, &GradBundle::zeros_like(&before), &mut state, 1e-3).unwrap();
    assert!((state.m_b[0][0] - 0.9).abs() < 1e-15 && (state.v_b[0][0] - 0.999).abs() < 1e-15);
    // zero moments plus zero gradient leave parameters untouched
    let mut fresh = before.clone();
    let mut zero_state = AdamState::new(&fresh);
    Adam::default().step(&mut fresh, &GradBundle::zeros_like(&before), &mut zero_state, 1e-3).unwrap();
    assert_eq!(fresh, before);
}

#[test]
fn adam_first_step_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = tiny_net();
    let before = flatten(&net);
    let grads = random_grads(&net, &mut rng);
    let mut state = AdamState::new(&net);
    Adam::default().step(&mut net, &grads, &mut state, 0.01).unwrap();
    let mut flat_g = Vec::new();
    for l in 0..net.num_layers() {
        flat_g.extend_from_slice(grads.weights[l].data());
        flat_g.extend_from_slice(&grads.biases[l]);
    }
    for ((p, b), g) in flatten(&net).iter().zip(&before).zip(&flat_g) {
        let expected = b - 0.01 * g / (g.abs() + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
    }
}

#[test]
fn adam_two_steps_match_scripted_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = tiny_net();
    let mut flat = flatten(&net);
    let mut oracle = ScriptedAdam::new(flat.len());
    let mut state = AdamState::new(&net);
    for _ in 0..2 {
        let grads = random_grads(&net, &mut rng);
        let mut flat_g = Vec::new();
        for l in 0..net.num_layers() {
            flat_g.extend_from_slice(grads.weights[l].data());
            flat_g.extend_from_slice(&grads.biases[l]);
        }
        Adam::default().step(&mut net, &grads, &mut state, 1e-3).unwrap();
        oracle.step(&mut flat, &flat_g, 1e-3);
    }
    for (a, b) in flatten(&net).iter().zip(&flat) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn adam_rejects_non_finite_gradient_untouched() {
    let mut net = tiny_net();
    let before = net.clone();
    let mut state = AdamState::new(&net);
    let mut grads = GradBundle::zeros_like(&net);
    grads.biases[1][0] = f64::NAN;
    let err = Adam::default().step(&mut net, &grads, &mut state, 1e-3).unwrap_err();
    assert_eq!(err, DsrlError::NonFiniteGradient { layer: 1 });
    assert_eq!(net, before);
    assert_eq!(state.t, 0);
}
