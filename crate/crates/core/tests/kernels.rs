use proptest::prelude::*;
use slowfast_core::averaging::simulate_averaged;
use slowfast_core::*;

fn ou_params() -> HypothesisParams {
    HypothesisParams {
        theta: [0.0, 1.0, 1.0, 2.0, 1.0, 1.0],
        alpha: [1.0; 4],
        gamma1: 1.0,
        gamma2: 1.0,
        lambda1: 0.0,
        lambda2: 0.0,
        beta: 2.0,
        beta_k: vec![2.0; 3],
    }
}

fn ou() -> CoefficientSystem {
    CoefficientSystem::scalar(
        "ou",
        ou_params(),
        |_, x, y, _| y - x,
        |_, _, _| 0.3,
        |_, x, y| x - y,
        |_, _, _| 1.0,
    )
    .unwrap()
    .with_closed_form_bbar(|_, x, _, out| out[0] = 0.0 * x[0])
}

proptest! {
    #[test]
    fn tamed_increment_is_below_one(d in -1e12f64..1e12, h in 1e-6f64..1.0) {
        let y = step_tamed(&[0.0], &[d], &[0.0], h).unwrap();
        prop_assert!(y[0].abs() < 1.0);
        prop_assert!((y[0] - h * d / (1.0 + h * d.abs())).abs() <= 1e-15 * y[0].abs().max(1.0));
    }

    #[test]
    fn tamed_matches_euler_for_small_drift(d in -1.0f64..1.0, y0 in -5.0f64..5.0) {
        let h = 1e-9;
        let y = step_tamed(&[y0], &[d], &[0.25], h).unwrap();
        prop_assert!((y[0] - (y0 + h * d + 0.25)).abs() < 1e-14);
    }
}

#[test]
fn explicit_euler_strong_order_one_for_additive_noise() {
    // dY = (1 − Y)ds + dW: with additive noise Euler has strong order 1.
    let sys = ou();
    let frozen = sys.frozen(0.0, &[1.0]).unwrap();
    let fine = 1.0 / 1024.0;
    let error = |h: f64| {
        let mut total = 0.0;
        let n = 200;
        for chain in 0..n {
            let noise = NoiseBundle::frozen(5, chain, fine, 1);
            let run = |step: f64| {
                simulate_frozen(
                    &frozen,
                    &[3.0],
                    1.0,
                    StepScheme::explicit(step),
                    &noise,
                    (1.0 / step) as usize,
                )
                .unwrap()
            };
            let coarse = run(h);
            let reference = run(fine);
            total += (coarse.y.last().unwrap() - reference.y.last().unwrap()).abs();
        }
        total / n as f64
    };
    let (e1, e2) = (error(1.0 / 32.0), error(1.0 / 64.0));
    let ratio = e1 / e2;
    assert!(
        (1.7..=2.3).contains(&ratio),
        "error ratio {ratio} ({e1}, {e2})"
    );
}

#[test]
fn coupled_runs_are_deterministic() {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let init = InitialState::new(vec![1.0], vec![1.0]);
    let noise = NoiseBundle::coupled(9, 4, 1e-2, 1e-4, 1, 1);
    let run = || {
        simulate_coupled(
            &sys,
            0.1,
            1.0,
            &init,
            StepScheme::tamed(1e-2),
            StepScheme::tamed(1e-4),
            &noise,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    let other = simulate_coupled(
        &sys,
        0.1,
        1.0,
        &init,
        StepScheme::tamed(1e-2),
        StepScheme::tamed(1e-4),
        &NoiseBundle::coupled(9, 5, 1e-2, 1e-4, 1, 1),
    )
    .unwrap();
    assert_ne!(a.x, other.x);
}

#[test]
fn averaged_and_coupled_share_slow_noise() {
    let sys = ou();
    let init = InitialState::new(vec![0.5], vec![0.0]);
    let noise = NoiseBundle::coupled(2, 0, 1e-2, 1e-3, 1, 1);
    let coupled = simulate_coupled(
        &sys,
        0.1,
        1.0,
        &init,
        StepScheme::tamed(1e-2),
        StepScheme::tamed(1e-3),
        &noise,
    )
    .unwrap();
    let provider = BbarProvider::analytic(&sys).unwrap();
    let avg = simulate_averaged(
        &sys,
        &provider,
        1.0,
        &[0.5],
        StepScheme::tamed(1e-2),
        &noise,
    )
    .unwrap();
    assert_eq!(coupled.len(), avg.len());
    assert_eq!(coupled.w1, avg.w1);
    // Rekeying the fast stream leaves W¹ untouched.
    let rekeyed = simulate_coupled(
        &sys,
        0.1,
        1.0,
        &init,
        StepScheme::tamed(1e-2),
        StepScheme::tamed(1e-3),
        &noise.with_fast_stream(7),
    )
    .unwrap();
    assert_eq!(coupled.w1, rekeyed.w1);
    assert_ne!(coupled.y, rekeyed.y);
}

#[test]
fn coupled_rejects_bad_inputs() {
    let sys = BuiltinModel::Example2 { lambda1: 1.0 }.system();
    let init = InitialState::new(vec![1.0], vec![1.0]);
    let noise = NoiseBundle::coupled(0, 0, 1e-2, 1e-3, 1, 1);
    let run = |eps: f64, fast: f64, init: &InitialState| {
        simulate_coupled(
            &sys,
            eps,
            1.0,
            init,
            StepScheme::tamed(1e-2),
            StepScheme::tamed(fast),
            &noise,
        )
    };
    assert!(matches!(
        run(0.5, 1e-3, &init),
        Err(Error::EpsilonOutOfRange { .. })
    ));
    assert!(matches!(run(0.1, 3e-3, &init), Err(Error::GridMismatch(_))));
    let wrong = InitialState::new(vec![1.0, 2.0], vec![1.0]);
    assert!(matches!(
        run(0.1, 1e-3, &wrong),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn explicit_scheme_reports_explosion() {
    let sys = CoefficientSystem::scalar(
        "blowup",
        ou_params(),
        |_, x, _, _| x * x * x,
        |_, _, _| 0.0,
        |_, _, y| -y,
        |_, _, _| 0.0,
    )
    .unwrap();
    let init = InitialState::new(vec![10.0], vec![0.0]);
    let noise = NoiseBundle::coupled(0, 0, 0.1, 0.01, 1, 1);
    let p = simulate_coupled(
        &sys,
        0.1,
        10.0,
        &init,
        StepScheme::explicit(0.1),
        StepScheme::explicit(0.01),
        &noise,
    )
    .unwrap();
    assert!(p.exploded());
    let tamed = simulate_coupled(
        &sys,
        0.1,
        1.0,
        &init,
        StepScheme::tamed(0.1),
        StepScheme::tamed(0.01),
        &noise,
    )
    .unwrap();
    assert!(!tamed.exploded());
}
