use slowfast_core::averaging::OnDemand;
use slowfast_core::*;

fn linear_params() -> HypothesisParams {
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

/// `b` does not read `y`, so every estimate is exact.
fn linear_in_tx() -> CoefficientSystem {
    CoefficientSystem::scalar(
        "linear",
        linear_params(),
        |t, x, _, _| t + 2.0 * x,
        |_, _, _| 1.0,
        |_, _, y| -y,
        |_, _, _| 1.0,
    )
    .unwrap()
}

fn quick_opts() -> EstimationOpts {
    EstimationOpts {
        burn_in: Some(0.5),
        sample_time: 2.0,
        n_chains: 4,
        h: 1e-2,
        ..EstimationOpts::default()
    }
}

/// Stationary `(E y, E y²)` of `dY = (a − 8Y)ds + (c + Y)dW`.
fn affine_moments(a: f64, c: f64) -> (f64, f64) {
    let m = a / 8.0;
    (m, (2.0 * a * m + c * c + 2.0 * c * m) / 15.0)
}

#[test]
fn multilinear_lookup_is_exact_for_affine_drift() {
    let sys = linear_in_tx();
    let grid = GridSpec {
        t_points: 3,
        x_points: vec![5],
    };
    let table = build_table(&sys, &[-2.0], &[2.0], 1.0, &grid, &quick_opts(), &[0.0]).unwrap();
    assert_eq!(table.node_count(), 15);
    for idx in 0..table.node_count() {
        let (t, x) = table.node(idx);
        let (v, _) = table.lookup(t, &x).unwrap();
        assert_eq!(v[0], table.values()[idx]);
    }
    for (t, x) in [
        (0.1, -1.9),
        (0.77, 0.3),
        (1.0, 2.0),
        (0.0, -2.0),
        (0.5, 1.234),
    ] {
        let (v, _) = table.lookup(t, &[x]).unwrap();
        assert!((v[0] - (t + 2.0 * x)).abs() < 1e-12, "{t} {x} {}", v[0]);
    }
    assert!(matches!(
        table.lookup(0.5, &[2.5]),
        Err(Error::OutOfTableRange { .. })
    ));
    assert!(matches!(
        table.lookup(1.5, &[0.0]),
        Err(Error::OutOfTableRange { .. })
    ));
}

#[test]
fn table_round_trips_through_disk() {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let grid = GridSpec {
        t_points: 2,
        x_points: vec![3],
    };
    let table = build_table(&sys, &[0.0], &[1.0], 1.0, &grid, &quick_opts(), &[1.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bbar.csv");
    table.save(&path).unwrap();
    let back = AveragedDriftTable::load(&path).unwrap();
    assert_eq!(back.values(), table.values());
    assert_eq!(back.stderrs(), table.stderrs());
    assert_eq!(back.fingerprint(), table.fingerprint());
    assert_eq!(back.header(), table.header());
    assert!(AveragedDriftTable::load_checked(&path, table.fingerprint()).is_ok());
    assert!(matches!(
        AveragedDriftTable::load_checked(&path, "deadbeef"),
        Err(Error::FingerprintMismatch { .. })
    ));

    // Node coordinates must match the grid in the header.
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.pop().unwrap();
    let mut cells: Vec<String> = last.split(',').map(String::from).collect();
    cells[0] = "5e-1".into();
    let tampered = format!("{}\n{}\n", lines.join("\n"), cells.join(","));
    std::fs::write(&path, tampered).unwrap();
    assert!(AveragedDriftTable::load(&path).is_err());
}

#[test]
fn example2_grid_matches_closed_form() {
    let sys = BuiltinModel::Example2 { lambda1: 1.0 }.system();
    let grid = GridSpec {
        t_points: 3,
        x_points: vec![3],
    };
    let opts = EstimationOpts {
        burn_in: Some(3.0),
        sample_time: 30.0,
        ..EstimationOpts::default()
    };
    let table = build_table(&sys, &[0.5], &[1.5], 1.0, &grid, &opts, &[1.0]).unwrap();
    let mut worst: f64 = 0.0;
    for idx in 0..table.node_count() {
        let (t, x) = table.node(idx);
        let x = x[0];
        let (m, q) = affine_moments(t.sqrt() * x, t + x);
        let oracle = t * t * x - x * x * x * q + m;
        let z = (table.values()[idx] - oracle) / table.stderrs()[idx];
        worst = worst.max(z.abs());
    }
    assert!(worst <= 4.0, "worst z-score {worst}");
}

#[test]
fn generator_residual_is_zero_in_stationarity() {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let est = estimate_bbar(&sys, 0.5, &[0.7], &[1.0], &EstimationOpts::default()).unwrap();
    assert!(
        est.generator_residual.abs() <= 4.0 * est.generator_stderr,
        "{} vs {}",
        est.generator_residual,
        est.generator_stderr
    );
    assert!(est.warnings.is_empty());
}

#[test]
fn estimates_are_reproducible_and_seed_dependent() {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let opts = quick_opts();
    let a = estimate_bbar(&sys, 1.0, &[1.0], &[1.0], &opts).unwrap();
    let b = estimate_bbar(&sys, 1.0, &[1.0], &[1.0], &opts).unwrap();
    assert_eq!(a.bbar, b.bbar);
    let c = estimate_bbar(
        &sys,
        1.0,
        &[1.0],
        &[1.0],
        &EstimationOpts { seed: 1, ..opts },
    )
    .unwrap();
    assert_ne!(a.bbar, c.bbar);
}

#[test]
fn on_demand_provider_caches_quantized_points() {
    let sys = linear_in_tx();
    let od = OnDemand::new(sys, quick_opts(), vec![0.0], 0.5, 0.5).unwrap();
    let provider = BbarProvider::on_demand(od);
    let (v1, _) = bbar_lookup(&provider, 0.1, &[0.9], &[0.0]).unwrap();
    let (v2, _) = bbar_lookup(&provider, 0.2, &[1.1], &[0.0]).unwrap();
    assert_eq!(v1, v2);
    assert!((v1[0] - 2.0).abs() < 1e-12);
    match &provider {
        BbarProvider::OnDemand(od) => assert_eq!(od.cached(), 1),
        _ => unreachable!(),
    }
}

#[test]
fn omega_dependent_models_cannot_be_tabulated() {
    let sys = BuiltinModel::Example3.system();
    let grid = GridSpec {
        t_points: 2,
        x_points: vec![2],
    };
    assert!(build_table(&sys, &[0.0], &[1.0], 1.0, &grid, &quick_opts(), &[1.0]).is_err());
}
