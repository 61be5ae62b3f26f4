use std::path::PathBuf;

use anyhow::{bail, Context};
use log::info;
use serde_json::json;
use slowfast_core::harness::{
    build_configured_table, path_csv, run_convergence_with, run_khasminskii_with, to_json_line,
    to_json_pretty, with_workers, write_convergence_outputs, write_report, EXPLOSION_BUDGET,
};
use slowfast_core::{
    check, estimate_bbar_at, run_rescaling_equivalence, simulate_coupled, AveragedDriftTable,
    Condition, ExperimentConfig, NoiseBundle, RescalingOpts, SampleSpec,
};

use crate::cli::{
    AvgTableCommand, CheckArgs, Command, ConvergeArgs, FreezeArgs, KhasminskiiArgs, RescaleArgs,
    SimulateArgs, TableBuildArgs,
};
use crate::Outcome;

const DEFAULT_OUTPUT: &str = "slowfast-out";

pub fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Freeze(a) => freeze(a),
        Command::AvgTable(AvgTableCommand::Build(a)) => table_build(*a),
        Command::AvgTable(AvgTableCommand::Inspect { table }) => table_inspect(table),
        Command::Check(a) => check_condition(a),
        Command::Converge(a) => converge(a),
        Command::Khasminskii(a) => khasminskii(a),
        Command::RescaleTest(a) => rescale(a),
    }
}

fn output_dir(c: &ExperimentConfig) -> PathBuf {
    c.harness
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    let c = a.common.resolve()?;
    let system = c.system()?;
    let eps = a.eps.unwrap_or(c.harness.eps[0]);
    let fast = c.fast_scheme(eps)?;
    let noise = NoiseBundle::coupled(
        c.harness.seed,
        a.path as u64,
        c.kernel.h_slow,
        fast.h,
        system.dims().d1,
        system.dims().d2,
    );
    let path = simulate_coupled(
        &system,
        eps,
        c.harness.horizon,
        &c.initial(),
        c.slow_scheme(),
        fast,
        &noise,
    )?;
    let text = path_csv(&path);
    match a.csv {
        Some(file) => {
            std::fs::write(&file, text).with_context(|| format!("writing {}", file.display()))?
        }
        None => print!("{text}"),
    }
    if let Some(e) = path.explosion {
        eprintln!("path exploded at step {} (t = {})", e.step, e.t);
        return Ok(Outcome::ExplosionBudget);
    }
    Ok(Outcome::Success)
}

fn freeze(a: FreezeArgs) -> anyhow::Result<Outcome> {
    let mut c = a.common.resolve()?;
    a.frozen.apply(&mut c);
    let system = c.system()?;
    let w1 = a.w1.unwrap_or_else(|| vec![0.0; system.dims().d1]);
    let est = estimate_bbar_at(&system, a.t, &a.x, &w1, &c.model.y0, &c.frozen)?;
    for w in &est.warnings {
        log::warn!("{w}");
    }
    let record = json!({
        "t": est.t,
        "x": est.x,
        "bbar": est.bbar,
        "stderr": est.stderr,
        "chains": est.n_chains,
        "burn_in": est.burn_in,
        "sample_time": est.sample_time,
        "model_fingerprint": system.fingerprint(),
    });
    println!("{}", to_json_line(&record)?);
    Ok(Outcome::Success)
}

fn table_build(a: TableBuildArgs) -> anyhow::Result<Outcome> {
    let mut c = a.common.resolve()?;
    a.frozen.apply(&mut c);
    if let Some(v) = a.t_points {
        c.averaging.t_points = v;
    }
    if a.x_points.is_some() {
        c.averaging.x_points = a.x_points.clone();
    }
    if a.box_lo.is_some() {
        c.averaging.box_lo = a.box_lo.clone();
    }
    if a.box_hi.is_some() {
        c.averaging.box_hi = a.box_hi.clone();
    }
    let system = c.system()?;
    let table = with_workers(c.harness.workers, || build_configured_table(&c, &system))??;
    table.save(&a.table)?;
    info!(
        "wrote {} nodes to {}",
        table.node_count(),
        a.table.display()
    );
    println!(
        "{}",
        to_json_line(&json!({
            "table": a.table,
            "fingerprint": table.fingerprint(),
            "model_fingerprint": table.header().model_fingerprint,
            "nodes": table.node_count(),
            "max_stderr": table.max_stderr(),
        }))?
    );
    Ok(Outcome::Success)
}

fn table_inspect(path: PathBuf) -> anyhow::Result<Outcome> {
    let table = AveragedDriftTable::load(&path)?;
    let values = table.values();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "header": table.header(),
        "nodes": table.node_count(),
        "min_bbar": lo,
        "max_bbar": hi,
        "max_stderr": table.max_stderr(),
    });
    print!("{}", to_json_pretty(&summary)?);
    Ok(Outcome::Success)
}

fn check_condition(a: CheckArgs) -> anyhow::Result<Outcome> {
    let c = a.common.resolve()?;
    let system = c.system()?;
    let condition: Condition = a.condition.parse()?;
    let spec = SampleSpec::with_box(a.half, a.samples, c.harness.seed);
    let report = check(&system, condition, &spec)?;
    print!("{}", to_json_pretty(&report)?);
    Ok(if report.pass {
        Outcome::Success
    } else {
        Outcome::Rejected
    })
}

fn converge(a: ConvergeArgs) -> anyhow::Result<Outcome> {
    let mut c = a.common.resolve()?;
    a.frozen.apply(&mut c);
    if let Some(v) = &a.eps {
        c.harness.eps = v.clone();
    }
    if let Some(v) = a.p {
        c.harness.p = v;
    }
    if let Some(v) = a.provider {
        c.averaging.provider = v.into();
    }
    if a.table.is_some() {
        c.averaging.table = a.table.clone();
    }
    if a.dump_paths {
        c.harness.dump_paths = true;
    }
    let dir = output_dir(&c);
    c.harness.output = Some(dir.clone());
    let system = c.system()?;
    let report = run_convergence_with(&c, &system)?;
    write_convergence_outputs(&dir, &report)?;
    let summary = json!({
        "report": dir.join("report.json"),
        "levels": report.levels.iter().map(|l| json!({
            "eps": l.eps, "mean_error": l.mean_error, "stderr": l.stderr, "explosions": l.explosions,
        })).collect::<Vec<_>>(),
        "fit": report.fit,
        "reference_slope": report.reference_slope,
        "acceptance": report.acceptance,
    });
    println!("{}", to_json_line(&summary)?);
    if report.any_level_failed() {
        return Ok(Outcome::ExplosionBudget);
    }
    Ok(if report.acceptance.passed() {
        Outcome::Success
    } else {
        Outcome::Rejected
    })
}

fn khasminskii(a: KhasminskiiArgs) -> anyhow::Result<Outcome> {
    let c = a.common.resolve()?;
    let system = c.system()?;
    let eps = a.eps.unwrap_or(*c.harness.eps.last().expect("validated"));
    let deltas = a
        .delta
        .or_else(|| c.harness.deltas.clone())
        .unwrap_or_else(|| vec![c.default_delta(&system, eps)]);
    let report = run_khasminskii_with(&c, &system, eps, &deltas)?;
    let dir = output_dir(&c);
    let path = write_report(&dir, &report)?;
    println!(
        "{}",
        to_json_line(&json!({
            "report": path,
            "levels": report.levels,
            "y_gap_decreasing": report.y_gap_decreasing,
            "y_gap_separated": report.y_gap_separated,
        }))?
    );
    let budget = EXPLOSION_BUDGET * c.harness.n_paths as f64;
    if report.levels.iter().any(|l| l.explosions as f64 >= budget) {
        return Ok(Outcome::ExplosionBudget);
    }
    if deltas.len() >= 2 && !(report.y_gap_decreasing && report.y_gap_separated) {
        return Ok(Outcome::Rejected);
    }
    Ok(Outcome::Success)
}

fn rescale(a: RescaleArgs) -> anyhow::Result<Outcome> {
    let c = a.common.resolve()?;
    let system = c.system()?;
    let x = a.x.unwrap_or_else(|| c.model.x0.clone());
    if a.grid == 0 {
        bail!("--grid must be positive");
    }
    let opts = RescalingOpts {
        h: a.h,
        n_paths: a.common.paths.unwrap_or(RescalingOpts::default().n_paths),
        seed: c.harness.seed,
        n_grid: a.grid,
        scheme: c.kernel.scheme,
        workers: c.harness.workers,
    };
    let report =
        run_rescaling_equivalence(&system, a.t, &x, &c.model.y0, a.eps, a.horizon_s, &opts)?;
    let dir = output_dir(&c);
    let path = write_report(&dir, &report)?;
    println!(
        "{}",
        to_json_line(&json!({ "report": path, "all_agree": report.all_agree }))?
    );
    Ok(if report.all_agree {
        Outcome::Success
    } else {
        Outcome::Rejected
    })
}
