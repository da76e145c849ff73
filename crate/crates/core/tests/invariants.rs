use consensus_core::kinetic::{collide_all, random_matching, run_from, KineticConfig, Population};
use consensus_core::linalg::Mat2;
use consensus_core::model::{cost_weights, from_transformed, semilinear_a, to_transformed};
use consensus_core::neural::{input_gradient, loss, loss_and_param_grad, Activation, Mlp, Target};
use consensus_core::riccati::{solve_care_hamiltonian, solve_care_newton, RiccatiProblem};
use consensus_core::sdre::{
    control_from_gradient, integrate_closed_loop, sdre_feedback, ControllerKind, FeedbackLaw, PairController, SdreLaw,
};
use consensus_core::dataset::{rng_for, LabeledSample};
use consensus_core::{BinaryState, ModelConfig, TransformedState, Vec2};
use proptest::prelude::*;
use rand::Rng;

const CFG: ModelConfig = ModelConfig { beta: -1.0, gamma: 0.025 };

fn spd(a: f64, b: f64, c: f64, shift: f64) -> Mat2 {
    let l = Mat2::new(a, 0.0, b, c);
    l * l.transpose() + Mat2::scaled_identity(shift)
}

fn random_problem(seed: u64) -> RiccatiProblem {
    let mut rng = rng_for(seed, 100);
    let mut u = || rng.random_range(-2.0..2.0);
    let a = Mat2::new(u(), u(), u(), u());
    let q = spd(u(), u(), u(), 0.1);
    let r = spd(u(), u(), u(), 0.1);
    RiccatiProblem::new(a, Mat2::IDENTITY, q, r)
}

fn pair() -> impl Strategy<Value = (f64, f64)> {
    (-1.0f64..=1.0, -1.0f64..=1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn riccati_solvers_are_stabilizing_and_agree(seed in 0u64..1_000_000) {
        let p = random_problem(seed);
        let h = solve_care_hamiltonian(&p).unwrap();
        let n = solve_care_newton(&p, None, 1e-12, 100).unwrap();
        for s in [&h, &n] {
            prop_assert!(s.residual <= 1e-9, "residual {}", s.residual);
            prop_assert!(s.marginal_mode.is_none());
            prop_assert!(p.closed_loop(&s.pi).eigenvalues().iter().all(|(re, _)| *re < 0.0));
        }
        prop_assert!((h.pi - n.pi).frobenius() <= 1e-8);
    }

    #[test]
    fn riccati_scaling(seed in 0u64..1_000_000, c in 0.01f64..100.0) {
        let p = random_problem(seed);
        let scaled = RiccatiProblem::new(p.a, p.b, p.q.scale(c), p.r.scale(c));
        let s1 = solve_care_hamiltonian(&p).unwrap();
        let s2 = solve_care_hamiltonian(&scaled).unwrap();
        let scale = s1.pi.max_abs().max(1.0);
        prop_assert!((s2.pi - s1.pi.scale(c)).max_abs() <= 1e-9 * c.max(1.0) * scale);
        prop_assert!((scaled.gain(&s2.pi) - p.gain(&s1.pi)).max_abs() <= 1e-9 * p.gain(&s1.pi).max_abs().max(1.0));
    }

    #[test]
    fn semilinear_factor_reproduces_pair_drift((xi, xj) in pair(), beta in -3.0f64..3.0) {
        let cfg = ModelConfig { beta, ..CFG };
        let t = to_transformed(BinaryState::new(xi, xj));
        let ax = semilinear_a(t, &cfg).mul_vec(t.as_vec());
        // Pair ODE written out independently of the crate.
        let di = 0.5 * beta * (1.0 - xi * xi) * (xj - xi);
        let dj = 0.5 * beta * (1.0 - xj * xj) * (xi - xj);
        prop_assert!((ax[0] - di).abs() <= 1e-12);
        prop_assert!((ax[1] - 0.5 * (di + dj)).abs() <= 1e-12);
    }

    #[test]
    fn consensus_direction_is_in_both_kernels(c in -1.0f64..=1.0, beta in -3.0f64..3.0) {
        let cfg = ModelConfig { beta, ..CFG };
        let a = semilinear_a(TransformedState::new(c, c), &cfg);
        prop_assert_eq!(a.mul_vec([1.0, 1.0]), [0.0, 0.0]);
        prop_assert_eq!(cost_weights(&cfg).q.mul_vec([1.0, 1.0]), [0.0, 0.0]);
    }

    #[test]
    fn transform_round_trip((xi, xj) in pair()) {
        let s = BinaryState::new(xi, xj);
        let back = from_transformed(to_transformed(s)).unwrap();
        prop_assert_eq!(back.xi, xi);
        prop_assert!((back.xj - xj).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn consensus_is_an_equilibrium(c in -1.0f64..=1.0) {
        let f = sdre_feedback(TransformedState::new(c, c), &CFG).unwrap();
        prop_assert!(f.u[0].abs() <= 1e-8 && f.u[1].abs() <= 1e-8 && f.value.abs() <= 1e-8);
        let law = SdreLaw { cfg: CFG };
        let rec = integrate_closed_loop(BinaryState::new(c, c), &PairController::Feedback(&law), 0.01, 2.0, &CFG).unwrap();
        prop_assert!(rec.states.iter().all(|s| (s.xi - c).abs() <= 1e-8 && (s.xj - c).abs() <= 1e-8));
    }

    #[test]
    fn feedback_is_the_gradient_formula((xi, xj) in pair(), gamma in 0.001f64..2.0) {
        let cfg = ModelConfig { gamma, ..CFG };
        let f = sdre_feedback(to_transformed(BinaryState::new(xi, xj)), &cfg).unwrap();
        prop_assert_eq!(f.u, control_from_gradient(f.grad_v, &cfg));
    }

    #[test]
    fn uncontrolled_pair_never_clamps((xi, xj) in (-0.999f64..0.999, -0.999f64..0.999), dt in 0.001f64..=0.01) {
        let rec = integrate_closed_loop(BinaryState::new(xi, xj), &PairController::Uncontrolled, dt, 5.0, &CFG).unwrap();
        prop_assert_eq!(rec.clamp_hits, 0);
    }

    #[test]
    fn value_control_is_uniformly_scaled_gradient(seed in 0u64..10_000, (xi, xj) in pair(), gamma in 0.001f64..2.0) {
        let cfg = ModelConfig { gamma, ..CFG };
        let net = Mlp::new(2, &Mlp::layout(6, 2, 1), seed);
        let (_, g) = input_gradient(&net, to_transformed(BinaryState::new(xi, xj)).as_vec());
        let u = control_from_gradient(g, &cfg);
        for c in 0..2 {
            let expected = -g[c] / (2.0 * cfg.r_scalar());
            prop_assert!((u[c] - expected).abs() <= 4.0 * f64::EPSILON * expected.abs());
        }
    }

    #[test]
    fn loss_decomposes(seed in 0u64..10_000, mu in 0.0f64..2.0) {
        let net = Mlp::new(2, &Mlp::layout(5, 1, 1), seed);
        let batch = random_batch(seed, 12);
        let parts = loss(&net, &batch, Target::Value, mu);
        prop_assert!(parts.value >= 0.0 && parts.gradient >= 0.0);
        prop_assert!((parts.total - (parts.value + mu * parts.gradient)).abs() <= 1e-12 * parts.total.max(1.0));
    }

    #[test]
    fn matching_is_perfect(half in 1usize..200, seed in 0u64..1000) {
        let n = 2 * half;
        let pairs = random_matching(n, &mut rng_for(seed, 1));
        let mut seen = vec![0u8; n];
        for (i, j) in pairs {
            prop_assert_ne!(i, j);
            seen[i] += 1;
            seen[j] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn collisions_stay_in_domain_and_move_every_pair(seed in 0u64..1000, eps in 0.01f64..1.0) {
        let mut rng = rng_for(seed, 2);
        let opinions: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut p = Population { opinions: opinions.clone(), step_count: 0, rng_seed: seed };
        let pairs = random_matching(64, &mut rng);
        collide_all(&mut p, &pairs, eps, Some(&SdreLaw { cfg: CFG }), &CFG).unwrap();
        prop_assert!(p.opinions.iter().all(|x| (-1.0..=1.0).contains(x)));
        // Δt·λ = 1: every matched pair interacts; there is no idle branch.
        for &(i, j) in &pairs {
            let s = BinaryState::new(opinions[i], opinions[j]);
            let u = consensus_core::sdre::pair_controls(s, &CFG).unwrap();
            let (next, _) = consensus_core::sdre::euler_pair_step(s, u, eps, &CFG);
            prop_assert_eq!((p.opinions[i], p.opinions[j]), (next.xi, next.xj));
        }
    }
}

fn random_batch(seed: u64, n: usize) -> Vec<LabeledSample> {
    let mut rng = rng_for(seed, 3);
    (0..n)
        .map(|_| {
            let xi = rng.random_range(-1.0..1.0);
            let xj = rng.random_range(-1.0..1.0);
            let mut r = || rng.random_range(-1.0..1.0);
            LabeledSample { state: to_transformed(BinaryState::new(xi, xj)), value: r(), grad_v: [r(), r()], u: [r(), r()] }
        })
        .collect()
}

fn random_net(seed: u64, out: usize) -> Mlp {
    let mut rng = rng_for(seed, 4);
    let depth = rng.random_range(1..=3);
    let mut spec: Vec<(usize, Activation)> = (0..depth).map(|_| (rng.random_range(2..=9), Activation::Sigmoid)).collect();
    spec.push((out, Activation::Identity));
    let mut net = Mlp::new(2, &spec, seed);
    // Spread the weights beyond the default init so saturation is exercised.
    let p: Vec<f64> = net.params_flat().iter().map(|w| 3.0 * w).collect();
    net.set_params_flat(&p);
    net
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn input_gradient_matches_central_differences(seed in 0u64..100_000, (xi, xj) in pair()) {
        let net = random_net(seed, 1);
        let x: Vec2 = to_transformed(BinaryState::new(xi, xj)).as_vec();
        let (v, g) = input_gradient(&net, x);
        prop_assert!((v - net.forward(&x)[0]).abs() <= 1e-12 * v.abs().max(1.0));
        let h = 1e-5;
        let fd: Vec<f64> = (0..2)
            .map(|c| {
                let (mut a, mut b) = (x, x);
                a[c] += h;
                b[c] -= h;
                (net.forward(&a)[0] - net.forward(&b)[0]) / (2.0 * h)
            })
            .collect();
        prop_assert!(rel_err(&g, &fd) <= 1e-5, "g {:?} fd {:?}", g, fd);
    }

    #[test]
    fn parameter_gradient_matches_central_differences(seed in 0u64..100_000, mu in prop::sample::select(vec![0.0, 0.05, 1.0, 2.0]), control in any::<bool>()) {
        let target = if control { Target::Control } else { Target::Value };
        let net = random_net(seed, target.out_dim());
        let batch = random_batch(seed, 9);
        let analytic = loss_and_param_grad(&net, &batch, target, mu);
        prop_assert!((analytic.loss.total - loss(&net, &batch, target, mu).total).abs() <= 1e-12);
        let p0 = net.params_flat();
        let h = 1e-6;
        let mut probe = net.clone();
        let fd: Vec<f64> = (0..p0.len())
            .map(|k| {
                let mut p = p0.clone();
                p[k] = p0[k] + h;
                probe.set_params_flat(&p);
                let up = loss(&probe, &batch, target, mu).total;
                p[k] = p0[k] - h;
                probe.set_params_flat(&p);
                let down = loss(&probe, &batch, target, mu).total;
                (up - down) / (2.0 * h)
            })
            .collect();
        prop_assert!(rel_err(&analytic.grads.params_flat(), &fd) <= 1e-5);
    }
}

/// Feedback law that calls the SDRE synthesis directly, standing in for a
/// network that reproduces its labels exactly.
struct ExactNet;

impl FeedbackLaw for ExactNet {
    fn controls(&self, states: &[TransformedState]) -> consensus_core::Result<Vec<Vec2>> {
        states.iter().map(|t| sdre_feedback(*t, &CFG).map(|f| f.u)).collect()
    }
}

#[test]
fn exact_network_controller_matches_sdre_bitwise() {
    let mut rng = rng_for(11, 5);
    let opinions: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let pop = Population { opinions, step_count: 0, rng_seed: 11 };
    let kc = |controller| KineticConfig { controller, n_steps: 5, ..KineticConfig::default() };
    let sdre = run_from(pop.clone(), &kc(ControllerKind::Sdre), &CFG, None).unwrap();
    let nn = run_from(pop, &kc(ControllerKind::NnValue), &CFG, Some(&ExactNet)).unwrap();
    assert_eq!(sdre.population.opinions, nn.population.opinions);
    assert_eq!(sdre.steps, nn.steps);
}

#[test]
fn finite_horizon_costs_are_ordered() {
    let law = SdreLaw { cfg: CFG };
    let mut rng = rng_for(21, 6);
    for _ in 0..20 {
        let s0 = BinaryState::new(rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95));
        let none = integrate_closed_loop(s0, &PairController::Uncontrolled, 0.01, 10.0, &CFG).unwrap().total_cost();
        let sdre = integrate_closed_loop(s0, &PairController::Feedback(&law), 0.01, 10.0, &CFG).unwrap().total_cost();
        let pmp = consensus_core::pmp::pmp_open_loop(s0, 10.0, 0.01, &CFG, 100, 1e-8).unwrap().cost;
        assert!(sdre <= none, "{s0:?}: sdre {sdre} > none {none}");
        assert!(pmp <= none, "{s0:?}: pmp {pmp} > none {none}");
    }
}
