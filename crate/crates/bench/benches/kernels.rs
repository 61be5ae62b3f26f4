use criterion::{black_box, criterion_group, criterion_main, Criterion};
use slowfast_core::{
    build_table, estimate_bbar, simulate_coupled, step_tamed, BuiltinModel, EstimationOpts,
    GridSpec, InitialState, NoiseBundle, StepScheme,
};

fn tamed_step(c: &mut Criterion) {
    c.bench_function("step_tamed/1d", |b| {
        b.iter(|| {
            step_tamed(
                black_box(&[1.0]),
                black_box(&[-8.0]),
                black_box(&[0.01]),
                1e-3,
            )
        })
    });
}

fn coupled_path(c: &mut Criterion) {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let init = InitialState::new(vec![1.0], vec![1.0]);
    let mut g = c.benchmark_group("simulate_coupled");
    for eps in [0.1, 0.01] {
        let fast = 1e-3 * eps / 10.0;
        let noise = NoiseBundle::coupled(1, 0, 1e-3, fast, 1, 1);
        g.bench_function(format!("example2/eps={eps}"), |b| {
            b.iter(|| {
                simulate_coupled(
                    &sys,
                    eps,
                    0.1,
                    &init,
                    StepScheme::tamed(1e-3),
                    StepScheme::tamed(fast),
                    &noise,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn frozen_estimate(c: &mut Criterion) {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let opts = EstimationOpts {
        burn_in: Some(1.0),
        sample_time: 5.0,
        ..EstimationOpts::default()
    };
    let mut g = c.benchmark_group("frozen");
    g.sample_size(10);
    g.bench_function("estimate_bbar/example2", |b| {
        b.iter(|| estimate_bbar(&sys, 1.0, &[1.0], &[1.0], &opts).unwrap())
    });
    g.finish();
}

fn table_lookup(c: &mut Criterion) {
    let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
    let opts = EstimationOpts {
        burn_in: Some(0.2),
        sample_time: 0.5,
        n_chains: 2,
        h: 1e-2,
        ..EstimationOpts::default()
    };
    let grid = GridSpec {
        t_points: 11,
        x_points: vec![41],
    };
    let table = build_table(&sys, &[-2.0], &[2.0], 1.0, &grid, &opts, &[1.0]).unwrap();
    c.bench_function("table/lookup", |b| {
        b.iter(|| table.lookup(black_box(0.37), black_box(&[0.81])).unwrap())
    });
}

criterion_group!(
    benches,
    tamed_step,
    coupled_path,
    frozen_estimate,
    table_lookup
);
criterion_main!(benches);
