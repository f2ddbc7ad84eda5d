use frozen_time::certificates::{check_corollary2, propose_time_sequence, psi_for, Variant};
use frozen_time::linalg::VectorNorm;
use frozen_time::operators::{LoopFunction, MatrixSchedule};
use frozen_time::signals::{History, Shifted, Signal};
use frozen_time::simulator::{
    build_example1, build_example2, build_random_linear, collect_certificate_inputs, simulate, verify_gain_bound,
    Example1Params, GainCheckTimes, Horizon, InputSpec, RandomParams, Scenario, SCHEMA_VERSION,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn with_input(s: &Scenario, u: Signal) -> Scenario {
    Scenario {
        input: InputSpec::Explicit { signal: u },
        ..s.clone()
    }
}

fn random_input(seed: u64, len: usize, dim: usize) -> Signal {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Signal::from_fn(0, len, dim, |_| DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn future_input_never_changes_past_state(seed in 0u64..1000, cut in 1usize..80, one_step in any::<bool>()) {
        let s = build_random_linear(seed, &RandomParams { horizon: 80, one_step, ..RandomParams::default() }).unwrap();
        let a = simulate(&s).unwrap();
        let mut rows: Vec<Vec<f64>> = a.u.values().iter().map(|v| v.iter().copied().collect()).collect();
        for r in rows.iter_mut().skip(cut) {
            for v in r.iter_mut() {
                *v = -*v + 1.0;
            }
        }
        let b = simulate(&with_input(&s, Signal::from_rows(0, &rows).unwrap())).unwrap();
        for t in 0..cut as i64 {
            prop_assert_eq!(a.x.at(t), b.x.at(t));
        }
    }

    #[test]
    fn state_envelope_is_nondecreasing(seed in 0u64..1000) {
        let s = build_random_linear(seed, &RandomParams::default()).unwrap();
        let r = simulate(&s).unwrap();
        prop_assert!(r.state_sup.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.gain_trace.iter().flatten().all(|g| *g >= 0.0));
    }
}

#[test]
fn linear_loops_superpose_and_dead_zone_loops_do_not() {
    let s = build_random_linear(4, &RandomParams::default()).unwrap();
    let (u1, u2) = (random_input(1, 150, 2), random_input(2, 150, 2));
    let sum = Signal::new(0, u1.values().iter().zip(u2.values()).map(|(a, b)| a * 2.0 + b).collect()).unwrap();
    let x1 = simulate(&with_input(&s, u1.clone())).unwrap().x;
    let x2 = simulate(&with_input(&s, u2.clone())).unwrap().x;
    let xs = simulate(&with_input(&s, sum.clone())).unwrap().x;
    for t in 0..150 {
        assert!((xs.at(t) - (x1.at(t) * 2.0 + x2.at(t))).amax() < 1e-9);
    }

    let dz = Scenario {
        g: LoopFunction::dead_zone_over(s.g.clone()),
        ..s
    };
    let x1 = simulate(&with_input(&dz, u1)).unwrap().x;
    let x2 = simulate(&with_input(&dz, u2)).unwrap().x;
    let xs = simulate(&with_input(&dz, sum)).unwrap().x;
    let gap = (0..150).map(|t| (xs.at(t) - (x1.at(t) * 2.0 + x2.at(t))).amax()).fold(0.0, f64::max);
    assert!(gap > 1e-3);
}

/// `(s_t w)(t)`: the frozen loop `y = w + G_t T y` driven by `w`.
fn frozen_response(g: &LoopFunction, t: i64, w: &Signal) -> DVector<f64> {
    let frozen = g.frozen(t);
    let mut ys: Vec<DVector<f64>> = Vec::new();
    let start = w.start();
    for tau in start..=t {
        let hist = Signal::with_dim(start, w.dim(), ys.clone()).unwrap();
        let y = w.at(tau) + frozen.eval(tau, &Shifted { inner: &hist, by: 1 });
        ys.push(y);
    }
    ys.pop().unwrap()
}

#[test]
fn state_splits_into_frozen_loop_terms() {
    for seed in 0..6 {
        let s = build_random_linear(seed, &RandomParams { horizon: 40, one_step: seed % 2 == 0, ..RandomParams::default() }).unwrap();
        let r = simulate(&s).unwrap();
        let fu = s.f.apply(&r.u, 0, 39).unwrap();
        let delayed = r.x.shift(1);
        for t in [5, 17, 39] {
            let v = Signal::from_fn(0, t as usize + 1, 2, |tau| s.g.nabla_extension_apply(t, &delayed, tau).unwrap()).unwrap();
            assert_eq!(v.at(t), DVector::zeros(2));
            let direct = frozen_response(&s.g, t, &fu) + frozen_response(&s.g, t, &v);
            assert!((direct - r.x.at(t)).amax() < 1e-9, "seed {seed}, t {t}");
        }
    }
}

#[test]
fn divergent_runs_are_not_certified() {
    let s = Scenario {
        schema_version: SCHEMA_VERSION,
        name: "unstable".into(),
        f: LoopFunction::identity(1),
        g: LoopFunction::memoryless(
            MatrixSchedule::new(0, (0..100).map(|k| DMatrix::from_element(1, 1, 2.0 + 0.01 * k as f64)).collect()).unwrap(),
        ),
        input: InputSpec::Step { amplitude: 1.0, dim: 1 },
        horizon: Horizon { start: 0, end: 99 },
        sigma: 1.2,
        sigma0: 1.44,
        rho: 0.9,
        seed: 0,
        time_sequence: None,
        norm: VectorNorm::Euclidean,
    };
    let r = simulate(&s).unwrap();
    assert!(r.divergent);
    let inputs = collect_certificate_inputs(&s).unwrap();
    for v in [Variant::Theorem1, Variant::Corollary2] {
        let psi = psi_for(&inputs, v, 1).unwrap();
        assert!(propose_time_sequence(&psi, 0, s.rho, 100).is_err());
    }
    let every = inputs.with_sequence(inputs.every_time());
    assert!(!check_corollary2(&every).unwrap().holds);
}

fn certify_and_verify(s: &Scenario) -> (bool, f64, f64) {
    let inputs = collect_certificate_inputs(s).unwrap();
    let psi = psi_for(&inputs, Variant::Corollary2, 1).unwrap();
    let Ok(seq) = propose_time_sequence(&psi, inputs.start_time, inputs.rho, inputs.len()) else {
        return (false, f64::INFINITY, 0.0);
    };
    let r = check_corollary2(&inputs.with_sequence(seq)).unwrap();
    let sim = simulate(s).unwrap();
    let v = verify_gain_bound(&sim, r.gain_bound, &GainCheckTimes::AllTimes);
    assert!(!r.holds || v.ok, "certified gain {} exceeded: {}", r.gain_bound, v.worst_ratio);
    (r.holds, r.gain_bound, v.worst_ratio)
}

#[test]
fn example_scenarios_certify_across_seeds() {
    for seed in 0..4 {
        let (holds, c_hat, gain) = certify_and_verify(&build_example1(seed, &Example1Params::default()).unwrap());
        assert!(holds && c_hat.is_finite() && gain <= c_hat, "example 1, seed {seed}");
        let (holds, c_hat, gain) = certify_and_verify(&build_example2(seed).unwrap());
        assert!(holds && c_hat.is_finite() && gain <= c_hat, "example 2, seed {seed}");
    }
}

#[test]
fn random_scenarios_respect_certified_gain() {
    let mut certified = 0;
    for seed in 0..40 {
        let s = build_random_linear(seed, &RandomParams { radius: 0.5, step: 0.1, one_step: seed % 2 == 1, ..RandomParams::default() }).unwrap();
        if certify_and_verify(&s).0 {
            certified += 1;
        }
    }
    assert!(certified > 10, "{certified} certified");
}

#[test]
fn explicit_and_generated_inputs_agree() {
    let spec = InputSpec::ExpCos { amplitude: 2.0, growth: Some(20.0), period: 2.0, dim: 2 };
    let u = spec.generate(0, 50).unwrap();
    assert_eq!(u.at(0), DVector::from_element(2, 2.0));
    let t = 13.0_f64;
    assert!((u.at(13)[1] - 2.0 * (t / 20.0).exp() * (t / 2.0).cos()).abs() < 1e-12);
    let again = InputSpec::Explicit { signal: u.clone() }.generate(0, 50).unwrap();
    assert_eq!(again, u);
}
