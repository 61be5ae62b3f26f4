use slowfast_core::harness::{
    errors_csv, run_khasminskii_with, write_convergence_outputs, ProviderKind,
};
use slowfast_core::hypotheses::check_h1_local_lipschitz;
use slowfast_core::noise::standard_normal;
use slowfast_core::*;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.harness.eps = vec![0.2, 0.1, 0.05];
    c.harness.n_paths = 6;
    c.kernel.h_slow = 1e-2;
    c.averaging.provider = ProviderKind::Analytic;
    c
}

#[test]
fn weighted_fit_recovers_known_slope() {
    // log mean = 0.4 log ε + noise with known relative error.
    let rel = 0.02;
    let levels: Vec<(f64, f64, f64)> = (0..6)
        .map(|i| {
            let eps = 10f64.powf(-(i as f64) * 0.5);
            let noise = 1.0 + rel * standard_normal(11, i);
            let mean = 3.0 * eps.powf(0.4) * noise;
            (eps, mean, rel * mean)
        })
        .collect();
    let (slope, se) = fit_rate(&levels).unwrap();
    assert!((slope - 0.4).abs() <= 3.0 * se, "{slope} ± {se}");
    assert!(se > 0.0 && se < 0.02);
}

#[test]
fn fit_falls_back_to_ols_without_stderrs() {
    let levels = [(0.1, 1.0, 0.0), (0.01, 0.1, 0.0), (0.001, 0.01, 0.0)];
    let (slope, se) = fit_rate(&levels).unwrap();
    assert!((slope - 1.0).abs() < 1e-12);
    assert!(se < 1e-12);
}

#[test]
fn convergence_outputs_are_written() {
    let c = small_config();
    let r = run_convergence(&c).unwrap();
    assert_eq!(r.levels.len(), 3);
    assert_eq!(r.provider, "analytic");
    let dir = tempfile::tempdir().unwrap();
    write_convergence_outputs(dir.path(), &r).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["kind"], "convergence");
    assert!(json["config"]["harness"].get("workers").is_none());
    let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(csv, errors_csv(&r));
    assert!(csv.starts_with("eps,mean_error,stderr,n_paths,explosions\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn path_dumps_have_one_file_per_path_and_level() {
    let mut c = small_config();
    c.harness.n_paths = 2;
    c.harness.dump_paths = true;
    let dir = tempfile::tempdir().unwrap();
    c.harness.output = Some(dir.path().to_path_buf());
    run_convergence(&c).unwrap();
    let n = std::fs::read_dir(dir.path().join("paths")).unwrap().count();
    assert_eq!(n, 6);
    let text = std::fs::read_to_string(dir.path().join("paths/path00000_eps0.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,x0,y0,w1_0"));
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn on_demand_and_table_providers_run() {
    let mut c = small_config();
    c.frozen.sample_time = 2.0;
    c.frozen.burn_in = Some(0.5);
    c.frozen.h = 1e-2;
    c.averaging.provider = ProviderKind::Ondemand;
    c.averaging.quantum_t = 0.25;
    c.averaging.quantum_x = 0.25;
    let r = run_convergence(&c).unwrap();
    assert_eq!(r.provider, "ondemand");
    assert!(r.levels.iter().all(|l| l.mean_error.is_finite()));

    c.averaging.provider = ProviderKind::Table;
    c.averaging.t_points = 3;
    c.averaging.x_points = Some(vec![9]);
    let r = run_convergence(&c).unwrap();
    assert_eq!(r.provider, "table");
    assert!(r.table_fingerprint.is_some());
}

#[test]
fn table_from_another_model_is_rejected() {
    let mut c = small_config();
    let other = BuiltinModel::Example2 { lambda1: 1.0 }.system();
    let grid = GridSpec {
        t_points: 2,
        x_points: vec![2],
    };
    let opts = EstimationOpts {
        sample_time: 1.0,
        burn_in: Some(0.1),
        h: 1e-2,
        ..EstimationOpts::default()
    };
    let table = build_table(&other, &[0.0], &[2.0], 1.0, &grid, &opts, &[1.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    table.save(&path).unwrap();
    c.averaging.provider = ProviderKind::Table;
    c.averaging.table = Some(path);
    assert!(matches!(
        run_convergence(&c),
        Err(Error::FingerprintMismatch { .. })
    ));
}

#[test]
fn khasminskii_gaps_vanish_for_single_block_free_model() {
    // f, g do not read (t, x) and b does not read x: auxiliary equals coupled.
    let params = HypothesisParams {
        theta: [0.0, 1.0, 1.0, 2.0, 1.0, 1.0],
        alpha: [1.0; 4],
        gamma1: 1.0,
        gamma2: 1.0,
        lambda1: 0.0,
        lambda2: 0.0,
        beta: 2.0,
        beta_k: vec![2.0],
    };
    let sys = CoefficientSystem::scalar(
        "free",
        params,
        |_, _, y, _| y.sin(),
        |_, _, _| 1.0,
        |_, _, y| -y,
        |_, _, _| 1.0,
    )
    .unwrap();
    let c = small_config();
    let r = run_khasminskii_with(&c, &sys, 0.1, &[0.5, 0.1]).unwrap();
    for l in &r.levels {
        assert_eq!(l.y_gap, 0.0);
        assert_eq!(l.x_gap, 0.0);
    }
}

#[test]
fn toml_config_round_trip() {
    let c = small_config();
    let text = toml::to_string(&c).unwrap();
    let back = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(back, c);
}

#[test]
fn lipschitz_report_recovers_holder_exponents() {
    let spec = SampleSpec::with_box(5.0, 20_000, 1);
    let ex2 = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let r = check_h1_local_lipschitz(&ex2, 5.0, &spec).unwrap();
    let g2 = r.fitted_gamma2.unwrap();
    assert!((g2 - 0.5).abs() < 0.1, "gamma2 {g2}");
    let ex3 = BuiltinModel::Example3.system();
    let r = check_h1_local_lipschitz(&ex3, 5.0, &spec).unwrap();
    let g1 = r.fitted_gamma1.unwrap();
    assert!(g1 < 0.6, "gamma1 {g1}");
}

#[test]
fn condition_names_round_trip() {
    for c in [
        Condition::H1i,
        Condition::H1ii,
        Condition::H1iii,
        Condition::H2i,
        Condition::H2ii,
        Condition::Ak(7),
    ] {
        let s = c.to_string().to_lowercase().replace("ak(7)", "ak:7");
        assert_eq!(s.parse::<Condition>().unwrap(), c);
    }
    assert!("h3".parse::<Condition>().is_err());
}

#[test]
fn checker_is_reproducible() {
    let ex2 = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let spec = SampleSpec::with_box(20.0, 5_000, 4);
    let a = check(&ex2, Condition::Ak(4), &spec).unwrap();
    let b = check(&ex2, Condition::Ak(4), &spec).unwrap();
    assert_eq!(a.worst_margin, b.worst_margin);
    assert!(a.pass);
    // Ray probes are added on top of the requested samples.
    assert!(a.n_samples > 5_000);
    assert_eq!(
        a.label,
        format!("no counterexample found in {} samples", a.n_samples)
    );
}
