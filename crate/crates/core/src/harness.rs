//! Experiment orchestration: configuration, Monte Carlo batches over paths,
//! strong-error rates, Khasminskii diagnostics, rescaling checks and the
//! persisted reports.
//!
//! Every run is a pure function of its configuration. Paths are simulated in
//! parallel and reduced in path-index order, so reports do not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{
    build_table, pilot_box, simulate_averaged, AveragedDriftTable, BbarProvider, GridSpec, OnDemand,
};
use crate::error::{Error, Result};
use crate::frozen::{mean_sd, EstimationOpts};
use crate::kernel::{
    simulate_auxiliary, simulate_block_fast, simulate_coupled_thinned, simulate_frozen, steps_in,
    InitialState, PathPair, SchemeKind, StepScheme,
};
use crate::model::{BuiltinModel, CoefficientSystem};
use crate::noise::{hash_key, integer_ratio, NoiseBundle};

pub const SCHEMA_VERSION: u32 = 1;
/// Fraction of exploded paths at which an ε level is marked failed.
pub const EXPLOSION_BUDGET: f64 = 0.05;
/// Width of confidence bands in standard errors.
pub const BAND: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `example1`, `example2` or `example3`.
    pub name: String,
    pub lambda1: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: "example2".into(),
            lambda1: 0.0,
            x0: vec![1.0],
            y0: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub h_slow: f64,
    /// `h_fast = ε · h_slow / fast_ratio`.
    pub fast_ratio: f64,
    pub scheme: SchemeKind,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            h_slow: 1e-3,
            fast_ratio: 10.0,
            scheme: SchemeKind::Tamed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Analytic,
    Table,
    Ondemand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AveragingConfig {
    pub provider: ProviderKind,
    /// Load this table instead of building one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub t_points: usize,
    /// Nodes per `x` component (default 41 each).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_points: Option<Vec<usize>>,
    /// Table box; derived from pilot runs when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_hi: Option<Vec<f64>>,
    pub pilot_paths: usize,
    pub quantum_t: f64,
    pub quantum_x: f64,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        AveragingConfig {
            provider: ProviderKind::Table,
            table: None,
            t_points: 11,
            x_points: None,
            box_lo: None,
            box_hi: None,
            pilot_paths: 8,
            quantum_t: 0.025,
            quantum_x: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub horizon: f64,
    pub p: f64,
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Block lengths for the Khasminskii diagnostics; defaults to `ε^γ̃`
    /// rounded to the slow grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Order `q` of the moment `E|Y_t|^q` in the uniformity check (default θ4).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_order: Option<f64>,
    /// Number of cells in the reporting grid for moment curves.
    pub report_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads (all cores when absent). Never affects results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub dump_paths: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            horizon: 1.0,
            p: 2.0,
            eps: vec![0.1, 0.01, 0.001],
            n_paths: 200,
            seed: 1,
            deltas: None,
            moment_order: None,
            report_points: 20,
            output: None,
            workers: None,
            dump_paths: false,
        }
    }
}

/// Full experiment description; the TOML file has one section per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub kernel: KernelConfig,
    pub frozen: EstimationOpts,
    pub averaging: AveragingConfig,
    pub harness: HarnessConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// The built-in model named in `[model]`.
    pub fn system(&self) -> Result<CoefficientSystem> {
        Ok(BuiltinModel::from_tag(&self.model.name, self.model.lambda1)?.system())
    }

    /// Copy without the fields that do not influence results.
    pub fn echo(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.harness.workers = None;
        c.harness.output = None;
        c
    }

    /// Check the configuration against `system`.
    pub fn validate(&self, system: &CoefficientSystem) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let d = system.dims();
        if self.model.x0.len() != d.n || self.model.y0.len() != d.m {
            return bad(format!(
                "x0/y0 have lengths {}/{}, model needs {}/{}",
                self.model.x0.len(),
                self.model.y0.len(),
                d.n,
                d.m
            ));
        }
        let h = &self.harness;
        if h.eps.is_empty() {
            return bad("eps list is empty".into());
        }
        let eps0 = system.epsilon0();
        for &e in &h.eps {
            if !(e > 0.0 && e < eps0) {
                return Err(Error::EpsilonOutOfRange { eps: e, eps0 });
            }
        }
        if h.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps list must be strictly decreasing".into());
        }
        if h.n_paths < 2 {
            return bad("n_paths must be at least 2".into());
        }
        if !(h.p > 0.0) {
            return bad(format!("p must be positive, got {}", h.p));
        }
        if let Some(pb) = system.params().p_bound() {
            if h.p >= pb {
                return bad(format!(
                    "p = {} is not below the admissible bound 2k/theta4 = {pb}",
                    h.p
                ));
            }
        }
        if !(h.horizon > 0.0) {
            return bad("horizon must be positive".into());
        }
        if !(self.kernel.h_slow > 0.0 && self.kernel.fast_ratio > 0.0) {
            return bad("h_slow and fast_ratio must be positive".into());
        }
        steps_in(h.horizon, self.kernel.h_slow, "horizon")?;
        for &e in &h.eps {
            self.substeps(e)?;
        }
        if h.report_points == 0 {
            return bad("report_points must be positive".into());
        }
        if h.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    /// Fast substeps per slow step at `eps`.
    pub fn substeps(&self, eps: f64) -> Result<u64> {
        integer_ratio(self.kernel.fast_ratio, eps).ok_or_else(|| {
            Error::GridMismatch(format!(
                "fast_ratio / eps = {} / {eps} is not an integer number of substeps",
                self.kernel.fast_ratio
            ))
        })
    }

    pub fn slow_scheme(&self) -> StepScheme {
        StepScheme {
            kind: self.kernel.scheme,
            h: self.kernel.h_slow,
        }
    }

    pub fn fast_scheme(&self, eps: f64) -> Result<StepScheme> {
        Ok(StepScheme {
            kind: self.kernel.scheme,
            h: self.kernel.h_slow / self.substeps(eps)? as f64,
        })
    }

    pub fn initial(&self) -> InitialState {
        InitialState::new(self.model.x0.clone(), self.model.y0.clone())
    }

    /// Noise for path `path` at ε level `level`: `W¹` depends on the path
    /// only, `W²` on both.
    pub fn noise(
        &self,
        system: &CoefficientSystem,
        path: usize,
        level: usize,
        h_fast: f64,
    ) -> NoiseBundle {
        let d = system.dims();
        NoiseBundle::coupled(
            self.harness.seed,
            path as u64,
            self.kernel.h_slow,
            h_fast,
            d.d1,
            d.d2,
        )
        .with_fast_stream(level as u64)
    }

    /// `δ = ε^γ̃` rounded to a positive multiple of `h_slow`.
    pub fn default_delta(&self, system: &CoefficientSystem, eps: f64) -> f64 {
        let h = self.kernel.h_slow;
        let raw = eps.powf(system.params().gamma_tilde());
        (raw / h).round().max(1.0) * h
    }
}

/// Run `f` on a pool of `workers` threads (global pool when `None`).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Build the `b̄` provider described by `[averaging]`.
pub fn make_provider(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<BbarProvider> {
    let a = &config.averaging;
    match a.provider {
        ProviderKind::Analytic => BbarProvider::analytic(system),
        ProviderKind::Ondemand => Ok(BbarProvider::on_demand(OnDemand::new(
            system.clone(),
            config.frozen.clone(),
            config.model.y0.clone(),
            a.quantum_t,
            a.quantum_x,
        )?)),
        ProviderKind::Table => {
            if let Some(path) = &a.table {
                let table = AveragedDriftTable::load(path)?;
                let h = table.header();
                if h.model_fingerprint != system.fingerprint() {
                    return Err(Error::FingerprintMismatch {
                        expected: system.fingerprint(),
                        found: h.model_fingerprint.clone(),
                    });
                }
                if h.horizon < config.harness.horizon {
                    return Err(Error::InvalidConfig(format!(
                        "table covers t <= {} but the horizon is {}",
                        h.horizon, config.harness.horizon
                    )));
                }
                return Ok(BbarProvider::table(table));
            }
            Ok(BbarProvider::table(build_configured_table(config, system)?))
        }
    }
}

/// Build the table from `[averaging]`, sizing the box from pilot runs when
/// it is not given.
pub fn build_configured_table(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<AveragedDriftTable> {
    let a = &config.averaging;
    let n = system.dims().n;
    let (lo, hi) = match (&a.box_lo, &a.box_hi) {
        (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
        (None, None) => pilot_table_box(config, system)?,
        _ => {
            return Err(Error::InvalidConfig(
                "give both box_lo and box_hi, or neither".into(),
            ))
        }
    };
    let grid = GridSpec {
        t_points: a.t_points,
        x_points: a.x_points.clone().unwrap_or_else(|| vec![41; n]),
    };
    build_table(
        system,
        &lo,
        &hi,
        config.harness.horizon,
        &grid,
        &config.frozen,
        &config.model.y0,
    )
}

/// Three times the slow range seen in pilot runs at the largest ε.
pub fn pilot_table_box(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eps = config.harness.eps[0];
    let fast = config.fast_scheme(eps)?;
    let d = system.dims();
    let pilot_seed = hash_key(&[config.harness.seed, 0x0070_696c_6f74]);
    let n = config.averaging.pilot_paths.max(1);
    let paths: Vec<PathPair> = (0..n)
        .into_par_iter()
        .map(|i| {
            let noise = NoiseBundle::coupled(
                pilot_seed,
                i as u64,
                config.kernel.h_slow,
                fast.h,
                d.d1,
                d.d2,
            );
            simulate_coupled_thinned(
                system,
                eps,
                config.harness.horizon,
                &config.initial(),
                config.slow_scheme(),
                fast,
                &noise,
                usize::MAX / 2,
            )
        })
        .collect::<Result<_>>()?;
    pilot_box(&paths)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub eps: f64,
    /// `Ê sup_t |X^ε_t − X̄_t|^p` over paths without explosions.
    pub mean_error: f64,
    pub stderr: f64,
    pub ci_half_width: f64,
    pub n_paths: usize,
    pub explosions: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub slope_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceAcceptance {
    pub strictly_decreasing: bool,
    pub separated: bool,
    pub slope_positive: bool,
}

impl ConvergenceAcceptance {
    pub fn passed(&self) -> bool {
        self.strictly_decreasing && self.separated && self.slope_positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub kind: &'static str,
    pub config: ExperimentConfig,
    pub model_fingerprint: String,
    pub provider: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_fingerprint: Option<String>,
    /// Failures of the averaged path (explosion or leaving the table box);
    /// each counts as an explosion at every level.
    pub averaged_failures: usize,
    pub levels: Vec<LevelResult>,
    pub fit: Option<RateFit>,
    pub gamma_tilde: f64,
    pub reference_slope: f64,
    pub acceptance: ConvergenceAcceptance,
}

impl ConvergenceReport {
    pub fn any_level_failed(&self) -> bool {
        self.levels.iter().any(|l| l.failed)
    }
}

/// Per-path outcome of a convergence run: error per level (None on
/// explosion) plus optional dumps.
struct PathOutcome {
    errors: Vec<Option<f64>>,
    averaged_failed: bool,
    dumps: Vec<PathPair>,
}

pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let system = config.system()?;
    run_convergence_with(config, &system)
}

/// Strong error `Ê sup_t |X^ε − X̄|^p` per ε level, with `X^ε` and `X̄`
/// driven by the same `W¹` on the same slow grid.
pub fn run_convergence_with(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<ConvergenceReport> {
    config.validate(system)?;
    with_workers(config.harness.workers, || convergence_inner(config, system))?
}

fn convergence_inner(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<ConvergenceReport> {
    let provider = make_provider(config, system)?;
    let h = &config.harness;
    let p = h.p;
    let init = config.initial();
    let slow = config.slow_scheme();
    let fasts: Vec<StepScheme> = h
        .eps
        .iter()
        .map(|e| config.fast_scheme(*e))
        .collect::<Result<_>>()?;

    let outcomes: Vec<PathOutcome> = (0..h.n_paths)
        .into_par_iter()
        .map(|i| -> Result<PathOutcome> {
            let base = config.noise(system, i, 0, fasts[0].h);
            let avg = match simulate_averaged(system, &provider, h.horizon, &init.x0, slow, &base) {
                Ok(a) if a.explosion.is_none() => Some(a),
                Ok(_) | Err(Error::OutOfTableRange { .. }) => None,
                Err(e) => return Err(e),
            };
            let mut errors = Vec::with_capacity(h.eps.len());
            let mut dumps = Vec::new();
            for (j, (&eps, &fast)) in h.eps.iter().zip(&fasts).enumerate() {
                let noise = base.with_fast_step(fast.h).with_fast_stream(j as u64);
                let path =
                    simulate_coupled_thinned(system, eps, h.horizon, &init, slow, fast, &noise, 1)?;
                let err = match (&avg, path.explosion) {
                    (Some(a), None) => {
                        let mut sup: f64 = 0.0;
                        for k in 0..path.len() {
                            let d: f64 = path
                                .x_at(k)
                                .iter()
                                .zip(a.x_at(k))
                                .map(|(u, v)| (u - v) * (u - v))
                                .sum::<f64>()
                                .sqrt();
                            sup = sup.max(d);
                        }
                        Some(sup.powf(p))
                    }
                    _ => None,
                };
                errors.push(err);
                if h.dump_paths {
                    dumps.push(path);
                }
            }
            Ok(PathOutcome {
                errors,
                averaged_failed: avg.is_none(),
                dumps,
            })
        })
        .collect::<Result<_>>()?;

    if h.dump_paths {
        if let Some(dir) = &h.output {
            let dir = dir.join("paths");
            std::fs::create_dir_all(&dir)?;
            for (i, o) in outcomes.iter().enumerate() {
                for (j, path) in o.dumps.iter().enumerate() {
                    write_path_csv(&dir.join(format!("path{i:05}_eps{j}.csv")), path)?;
                }
            }
        }
    }

    let averaged_failures = outcomes.iter().filter(|o| o.averaged_failed).count();
    let mut levels = Vec::with_capacity(h.eps.len());
    for (j, &eps) in h.eps.iter().enumerate() {
        let vals: Vec<f64> = outcomes.iter().filter_map(|o| o.errors[j]).collect();
        let explosions = h.n_paths - vals.len();
        let failed = explosions as f64 >= EXPLOSION_BUDGET * h.n_paths as f64 || vals.len() < 2;
        let (mean, sd) = if vals.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_sd(&vals)
        };
        let se = sd / (vals.len() as f64).sqrt();
        levels.push(LevelResult {
            eps,
            mean_error: mean,
            stderr: se,
            ci_half_width: BAND * se,
            n_paths: h.n_paths,
            explosions,
            failed,
        });
    }

    let usable: Vec<(f64, f64, f64)> = levels
        .iter()
        .filter(|l| !l.failed)
        .map(|l| (l.eps, l.mean_error, l.stderr))
        .collect();
    let fit = fit_rate(&usable).ok().map(|(slope, slope_stderr)| RateFit {
        slope,
        slope_stderr,
    });
    let ok_levels = levels.iter().all(|l| !l.failed);
    let strictly_decreasing =
        ok_levels && levels.windows(2).all(|w| w[1].mean_error < w[0].mean_error);
    let separated = ok_levels && {
        let (a, b) = (&levels[0], &levels[levels.len() - 1]);
        a.mean_error - b.mean_error > BAND * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
    };
    let slope_positive = fit
        .as_ref()
        .is_some_and(|f| f.slope - 2.0 * f.slope_stderr > 0.0);
    let gt = system.params().gamma_tilde();
    Ok(ConvergenceReport {
        schema_version: SCHEMA_VERSION,
        kind: "convergence",
        config: config.echo(),
        model_fingerprint: system.fingerprint(),
        provider: provider.kind(),
        table_fingerprint: match &provider {
            BbarProvider::Table(t) => Some(t.fingerprint().to_string()),
            _ => None,
        },
        averaged_failures,
        levels,
        fit,
        gamma_tilde: gt,
        reference_slope: p * (1.0 - gt) / 2.0,
        acceptance: ConvergenceAcceptance {
            strictly_decreasing,
            separated,
            slope_positive,
        },
    })
}

/// Weighted least-squares slope of `log mean` against `log ε`, weights
/// `(mean/stderr)²` from the delta method. Falls back to ordinary least
/// squares when any stderr is zero.
pub fn fit_rate(levels: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    if levels.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 levels, got {}",
            levels.len()
        )));
    }
    if let Some(l) = levels.iter().find(|l| !(l.1 > 0.0) || !(l.0 > 0.0)) {
        return Err(Error::DegenerateFit(format!(
            "non-positive value at eps = {}",
            l.0
        )));
    }
    let xs: Vec<f64> = levels.iter().map(|l| l.0.ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.1.ln()).collect();
    if levels.iter().any(|l| !(l.2 > 0.0)) {
        let (s, _, se) = crate::frozen::ols(&xs, &ys);
        return Ok((s, se));
    }
    let w: Vec<f64> = levels.iter().map(|l| (l.1 / l.2).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = w.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&xs).map(|(a, x)| a * (x - mx).powi(2)).sum();
    let sxy: f64 = w
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(a, (x, y))| a * (x - mx) * (y - my))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all eps levels coincide".into()));
    }
    Ok((sxy / sxx, (1.0 / sxx).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KhasminskiiLevel {
    pub delta: f64,
    /// `sup_t Ê|Y^ε_t − Ŷ_t|²` and its stderr at the maximizing time.
    pub y_gap: f64,
    pub y_gap_stderr: f64,
    pub y_gap_time: f64,
    /// `T⁻¹∫ Ê|Y^ε_t − Ŷ_t|² dt` on the slow grid.
    pub y_gap_avg: f64,
    pub y_gap_avg_stderr: f64,
    /// `Ê sup_t |X^ε_t − X̂_t|²`.
    pub x_gap: f64,
    pub x_gap_stderr: f64,
    pub explosions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KhasminskiiReport {
    pub schema_version: u32,
    pub kind: &'static str,
    pub config: ExperimentConfig,
    pub model_fingerprint: String,
    pub eps: f64,
    pub levels: Vec<KhasminskiiLevel>,
    /// Log-log slopes of the time-averaged `Y` gap and the `X` gap against δ.
    pub y_gap_fit: Option<RateFit>,
    pub x_gap_fit: Option<RateFit>,
    /// Time-averaged `Y` gap nonincreasing as δ shrinks, and its extreme
    /// levels separated by the confidence band.
    pub y_gap_decreasing: bool,
    pub y_gap_separated: bool,
}

pub fn run_khasminskii_diagnostics(
    config: &ExperimentConfig,
    eps: f64,
    deltas: &[f64],
) -> Result<KhasminskiiReport> {
    let system = config.system()?;
    run_khasminskii_with(config, &system, eps, deltas)
}

/// Gaps between the coupled system and the Khasminskii auxiliary processes
/// for block lengths `deltas` (listed from largest to smallest).
pub fn run_khasminskii_with(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
    eps: f64,
    deltas: &[f64],
) -> Result<KhasminskiiReport> {
    config.validate(system)?;
    let eps0 = system.epsilon0();
    if !(eps > 0.0 && eps < eps0) {
        return Err(Error::EpsilonOutOfRange { eps, eps0 });
    }
    if deltas.is_empty() {
        return Err(Error::InvalidConfig("delta list is empty".into()));
    }
    let h = &config.harness;
    let slow = config.slow_scheme();
    for &d in deltas {
        if d < h.horizon && integer_ratio(d, slow.h).is_none() {
            return Err(Error::GridMismatch(format!(
                "delta {d} is not a multiple of h_slow {}",
                slow.h
            )));
        }
    }
    let fast = config.fast_scheme(eps)?;
    let init = config.initial();
    let n_slow = steps_in(h.horizon, slow.h, "horizon")?;

    // Per path: per delta, (y-gap curve, x sup gap) or None on explosion.
    type PathGaps = Vec<Option<(Vec<f64>, f64)>>;
    let rows: Vec<PathGaps> = with_workers(h.workers, || {
        (0..h.n_paths)
            .into_par_iter()
            .map(|i| -> Result<PathGaps> {
                let noise = config.noise(system, i, 0, fast.h);
                let path =
                    simulate_coupled_thinned(system, eps, h.horizon, &init, slow, fast, &noise, 1)?;
                if path.exploded() {
                    return Ok(vec![None; deltas.len()]);
                }
                deltas
                    .iter()
                    .map(|&d| {
                        let aux = simulate_auxiliary(
                            system, eps, d, h.horizon, &init, slow, fast, &noise, &path,
                        )?;
                        if aux.explosion.is_some() {
                            return Ok(None);
                        }
                        let mut ycurve = Vec::with_capacity(n_slow + 1);
                        let mut xsup: f64 = 0.0;
                        for k in 0..=n_slow {
                            let dy: f64 = path
                                .y_at(k)
                                .iter()
                                .zip(aux.y_at(k))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum();
                            let dx: f64 = path
                                .x_at(k)
                                .iter()
                                .zip(aux.x_at(k))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum();
                            ycurve.push(dy);
                            xsup = xsup.max(dx);
                        }
                        Ok(Some((ycurve, xsup)))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut levels = Vec::with_capacity(deltas.len());
    for (j, &d) in deltas.iter().enumerate() {
        let ok: Vec<&(Vec<f64>, f64)> = rows.iter().filter_map(|r| r[j].as_ref()).collect();
        let explosions = rows.len() - ok.len();
        let nok = ok.len() as f64;
        let (mut best, mut best_se, mut best_t) = (f64::NEG_INFINITY, 0.0, 0.0);
        for k in 0..=n_slow {
            let col: Vec<f64> = ok.iter().map(|r| r.0[k]).collect();
            let (m, sd) = mean_sd(&col);
            if m > best {
                best = m;
                best_se = sd / nok.sqrt();
                best_t = k as f64 * slow.h;
            }
        }
        let avgs: Vec<f64> = ok
            .iter()
            .map(|r| r.0.iter().sum::<f64>() / r.0.len() as f64)
            .collect();
        let (am, asd) = mean_sd(&avgs);
        let xs: Vec<f64> = ok.iter().map(|r| r.1).collect();
        let (xm, xsd) = mean_sd(&xs);
        levels.push(KhasminskiiLevel {
            delta: d,
            y_gap: best,
            y_gap_stderr: best_se,
            y_gap_time: best_t,
            y_gap_avg: am,
            y_gap_avg_stderr: asd / nok.sqrt(),
            x_gap: xm,
            x_gap_stderr: xsd / nok.sqrt(),
            explosions,
        });
    }
    let fit_of = |pick: &dyn Fn(&KhasminskiiLevel) -> (f64, f64)| {
        let pts: Vec<(f64, f64, f64)> = levels
            .iter()
            .map(|l| {
                let (m, s) = pick(l);
                (l.delta, m, s)
            })
            .collect();
        fit_rate(&pts).ok().map(|(slope, slope_stderr)| RateFit {
            slope,
            slope_stderr,
        })
    };
    let y_gap_fit = fit_of(&|l| (l.y_gap_avg, l.y_gap_avg_stderr));
    let x_gap_fit = fit_of(&|l| (l.x_gap, l.x_gap_stderr));
    let y_gap_decreasing = levels.windows(2).all(|w| w[1].y_gap_avg < w[0].y_gap_avg);
    let (first, last) = (&levels[0], &levels[levels.len() - 1]);
    let y_gap_separated = first.y_gap_avg - last.y_gap_avg
        > BAND * first.y_gap_avg_stderr.hypot(last.y_gap_avg_stderr);
    Ok(KhasminskiiReport {
        schema_version: SCHEMA_VERSION,
        kind: "khasminskii",
        config: config.echo(),
        model_fingerprint: system.fingerprint(),
        eps,
        levels,
        y_gap_fit,
        x_gap_fit,
        y_gap_decreasing,
        y_gap_separated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescalingPoint {
    pub s: f64,
    pub block_mean: f64,
    pub block_mean_stderr: f64,
    pub frozen_mean: f64,
    pub frozen_mean_stderr: f64,
    pub block_second: f64,
    pub block_second_stderr: f64,
    pub frozen_second: f64,
    pub frozen_second_stderr: f64,
}

impl RescalingPoint {
    pub fn pooled_mean_stderr(&self) -> f64 {
        self.block_mean_stderr.hypot(self.frozen_mean_stderr)
    }

    pub fn pooled_second_stderr(&self) -> f64 {
        self.block_second_stderr.hypot(self.frozen_second_stderr)
    }

    /// Means and second moments agree within the band.
    pub fn agree(&self) -> bool {
        (self.block_mean - self.frozen_mean).abs() <= BAND * self.pooled_mean_stderr()
            && (self.block_second - self.frozen_second).abs() <= BAND * self.pooled_second_stderr()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescalingReport {
    pub schema_version: u32,
    pub kind: &'static str,
    pub model_fingerprint: String,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub eps: f64,
    pub horizon_s: f64,
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub points: Vec<RescalingPoint>,
    pub all_agree: bool,
}

/// Options for [`run_rescaling_equivalence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescalingOpts {
    /// Step on the fast clock `s`.
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub n_grid: usize,
    pub scheme: SchemeKind,
    pub workers: Option<usize>,
}

impl Default for RescalingOpts {
    fn default() -> Self {
        RescalingOpts {
            h: 1e-3,
            n_paths: 10_000,
            seed: 0,
            n_grid: 10,
            scheme: SchemeKind::Tamed,
            workers: None,
        }
    }
}

/// Compare the ε-scaled block process (real time `sε`) with the frozen
/// process at `s`, using independent noises, at `n_grid` equally spaced
/// times in `(0, S]`. Moments of the first component are compared.
#[allow(clippy::too_many_arguments)]
pub fn run_rescaling_equivalence(
    system: &CoefficientSystem,
    t0: f64,
    x0: &[f64],
    y0: &[f64],
    eps: f64,
    horizon_s: f64,
    opts: &RescalingOpts,
) -> Result<RescalingReport> {
    if opts.n_paths < 2 || opts.n_grid == 0 {
        return Err(Error::InvalidParams(
            "need n_paths >= 2 and n_grid >= 1".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::EpsilonOutOfRange {
            eps,
            eps0: system.epsilon0(),
        });
    }
    let n_steps = steps_in(horizon_s, opts.h, "rescaling horizon")?;
    if n_steps % opts.n_grid != 0 {
        return Err(Error::GridMismatch(format!(
            "{n_steps} steps cannot be split into {} equal reporting intervals",
            opts.n_grid
        )));
    }
    let every = n_steps / opts.n_grid;
    let d = system.dims();
    let frozen = system.frozen(t0, x0)?;
    let fast_real = StepScheme {
        kind: opts.scheme,
        h: eps * opts.h,
    };
    let scheme = StepScheme {
        kind: opts.scheme,
        h: opts.h,
    };
    let rows: Vec<(Vec<f64>, Vec<f64>)> = with_workers(opts.workers, || {
        (0..opts.n_paths)
            .into_par_iter()
            .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
                let nb =
                    NoiseBundle::coupled(opts.seed, i as u64, fast_real.h, fast_real.h, d.d1, d.d2);
                let block = simulate_block_fast(
                    system,
                    t0,
                    x0,
                    y0,
                    eps,
                    eps * horizon_s,
                    fast_real,
                    &nb,
                    every,
                )?;
                let nf = NoiseBundle::frozen(opts.seed, i as u64, opts.h, d.d2);
                let fr = simulate_frozen(&frozen, y0, horizon_s, scheme, &nf, every)?;
                if let Some(e) = block.explosion.or(fr.explosion) {
                    return Err(e.into_error());
                }
                let first = |p: &crate::kernel::FastPath| {
                    (1..=opts.n_grid).map(|j| p.y_at(j)[0]).collect::<Vec<_>>()
                };
                Ok((first(&block), first(&fr)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let np = (rows.len() as f64).sqrt();
    let stat = |vals: Vec<f64>| {
        let (m, sd) = mean_sd(&vals);
        (m, sd / np)
    };
    let points: Vec<RescalingPoint> = (0..opts.n_grid)
        .map(|j| {
            let (bm, bms) = stat(rows.iter().map(|r| r.0[j]).collect());
            let (fm, fms) = stat(rows.iter().map(|r| r.1[j]).collect());
            let (b2, b2s) = stat(rows.iter().map(|r| r.0[j] * r.0[j]).collect());
            let (f2, f2s) = stat(rows.iter().map(|r| r.1[j] * r.1[j]).collect());
            RescalingPoint {
                s: ((j + 1) * every) as f64 * opts.h,
                block_mean: bm,
                block_mean_stderr: bms,
                frozen_mean: fm,
                frozen_mean_stderr: fms,
                block_second: b2,
                block_second_stderr: b2s,
                frozen_second: f2,
                frozen_second_stderr: f2s,
            }
        })
        .collect();
    let all_agree = points.iter().all(|p| p.agree());
    Ok(RescalingReport {
        schema_version: SCHEMA_VERSION,
        kind: "rescaling",
        model_fingerprint: system.fingerprint(),
        t0,
        x0: x0.to_vec(),
        y0: y0.to_vec(),
        eps,
        horizon_s,
        h: opts.h,
        n_paths: opts.n_paths,
        seed: opts.seed,
        points,
        all_agree,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentLevel {
    pub eps: f64,
    /// Largest cell estimate of `Ê|Y^ε_t|^q`; each reporting cell averages
    /// `|Y^ε|^q` over its slow steps and then over paths.
    pub sup_moment: f64,
    pub stderr: f64,
    /// Start of the maximizing cell.
    pub t_at_sup: f64,
    /// `max_j Ê|Y^ε_{t_j}|^q` at the cell boundaries, for reference.
    pub pointwise_sup: f64,
    pub pointwise_stderr: f64,
    pub explosions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentUniformityReport {
    pub schema_version: u32,
    pub kind: &'static str,
    pub config: ExperimentConfig,
    pub model_fingerprint: String,
    pub order: f64,
    pub levels: Vec<MomentLevel>,
    /// Largest over smallest `sup_moment` across ε.
    pub ratio: f64,
}

pub fn run_moment_uniformity(config: &ExperimentConfig) -> Result<MomentUniformityReport> {
    let system = config.system()?;
    run_moment_uniformity_with(config, &system)
}

/// Uniform-in-ε moment check: `sup_t Ê|Y^ε_t|^q` on the reporting grid for
/// every ε in the config.
pub fn run_moment_uniformity_with(
    config: &ExperimentConfig,
    system: &CoefficientSystem,
) -> Result<MomentUniformityReport> {
    config.validate(system)?;
    let h = &config.harness;
    let q = h.moment_order.unwrap_or(system.params().theta4());
    let slow = config.slow_scheme();
    let init = config.initial();
    let n_slow = steps_in(h.horizon, slow.h, "horizon")?;
    let cells = h.report_points.min(n_slow);
    let fasts: Vec<StepScheme> = h
        .eps
        .iter()
        .map(|e| config.fast_scheme(*e))
        .collect::<Result<_>>()?;
    // Per path and level: (cell averages, boundary values).
    type Curves = Option<(Vec<f64>, Vec<f64>)>;
    let rows: Vec<Vec<Curves>> = with_workers(h.workers, || {
        (0..h.n_paths)
            .into_par_iter()
            .map(|i| -> Result<Vec<Curves>> {
                h.eps
                    .iter()
                    .zip(&fasts)
                    .enumerate()
                    .map(|(j, (&eps, &fast))| {
                        let noise = config.noise(system, i, j, fast.h);
                        let p = simulate_coupled_thinned(
                            system, eps, h.horizon, &init, slow, fast, &noise, 1,
                        )?;
                        if p.exploded() {
                            return Ok(None);
                        }
                        let m: Vec<f64> = (0..=n_slow)
                            .map(|k| p.y_at(k).iter().map(|v| v * v).sum::<f64>().powf(q / 2.0))
                            .collect();
                        let bound = |c: usize| c * n_slow / cells;
                        let avg = (0..cells)
                            .map(|c| {
                                let cell = &m[bound(c)..bound(c + 1)];
                                cell.iter().sum::<f64>() / cell.len() as f64
                            })
                            .collect();
                        let pts = (0..=cells).map(|c| m[bound(c)]).collect();
                        Ok(Some((avg, pts)))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let sup_of = |cols: usize, pick: &dyn Fn(usize) -> Vec<f64>| {
        let (mut best, mut best_se, mut at) = (f64::NEG_INFINITY, f64::NAN, 0);
        for c in 0..cols {
            let col = pick(c);
            let (m, sd) = mean_sd(&col);
            if m > best {
                best = m;
                best_se = sd / (col.len() as f64).sqrt();
                at = c;
            }
        }
        (best, best_se, at)
    };
    let mut levels = Vec::new();
    for (j, &eps) in h.eps.iter().enumerate() {
        let ok: Vec<&(Vec<f64>, Vec<f64>)> = rows.iter().filter_map(|r| r[j].as_ref()).collect();
        let explosions = rows.len() - ok.len();
        let (sup, se, at) = sup_of(cells, &|c| ok.iter().map(|r| r.0[c]).collect());
        let (psup, pse, _) = sup_of(cells + 1, &|c| ok.iter().map(|r| r.1[c]).collect());
        levels.push(MomentLevel {
            eps,
            sup_moment: sup,
            stderr: se,
            t_at_sup: (at * n_slow / cells) as f64 * slow.h,
            pointwise_sup: psup,
            pointwise_stderr: pse,
            explosions,
        });
    }
    let hi = levels
        .iter()
        .map(|l| l.sup_moment)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = levels
        .iter()
        .map(|l| l.sup_moment)
        .fold(f64::INFINITY, f64::min);
    Ok(MomentUniformityReport {
        schema_version: SCHEMA_VERSION,
        kind: "moment-uniformity",
        config: config.echo(),
        model_fingerprint: system.fingerprint(),
        order: q,
        levels,
        ratio: hi / lo,
    })
}

/// Write `t, x0.., y0.., w1_0..` rows for a coupled path (`y` must be stored
/// on every slow step).
pub fn write_path_csv(path: &Path, p: &PathPair) -> Result<()> {
    std::fs::write(path, path_csv(p))?;
    Ok(())
}

pub fn path_csv(p: &PathPair) -> String {
    let d = p.dims;
    let mut out = String::from("t");
    for i in 0..d.n {
        write!(out, ",x{i}").unwrap();
    }
    for i in 0..d.m {
        write!(out, ",y{i}").unwrap();
    }
    for i in 0..d.d1 {
        write!(out, ",w1_{i}").unwrap();
    }
    out.push('\n');
    for k in 0..p.len() {
        write!(out, "{}", fmt17(p.times[k])).unwrap();
        for v in p.x_at(k) {
            write!(out, ",{}", fmt17(*v)).unwrap();
        }
        let y = if k % p.y_every == 0 && k / p.y_every < p.y_len() {
            p.y_at(k / p.y_every).to_vec()
        } else {
            vec![f64::NAN; d.m]
        };
        for v in y {
            write!(out, ",{}", fmt17(v)).unwrap();
        }
        for v in p.w1_at(k) {
            write!(out, ",{}", fmt17(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// A float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// `errors.csv` body for a convergence report.
pub fn errors_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("eps,mean_error,stderr,n_paths,explosions\n");
    for l in &report.levels {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt17(l.eps),
            fmt17(l.mean_error),
            fmt17(l.stderr),
            l.n_paths,
            l.explosions
        )
        .unwrap();
    }
    out
}

/// JSON formatter printing every float with 17 significant digits.
struct Digits17<F>(F);

impl<F: serde_json::ser::Formatter> serde_json::ser::Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format!("{value:.16e}").as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_key(w)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Digits17(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Single-line JSON with 17-significant-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Digits17(serde_json::ser::CompactFormatter),
    );
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Write `report.json` (and `errors.csv` for convergence runs) into `dir`.
pub fn write_report<T: Serialize>(dir: &Path, report: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    std::fs::write(&path, to_json_pretty(report)?)?;
    Ok(path)
}

pub fn write_convergence_outputs(dir: &Path, report: &ConvergenceReport) -> Result<()> {
    write_report(dir, report)?;
    std::fs::write(dir.join("errors.csv"), errors_csv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_rate_noiseless() {
        let lv: Vec<(f64, f64, f64)> = [0.1, 0.01, 0.001]
            .iter()
            .map(|e: &f64| (*e, e.powf(0.25), 0.01 * e.powf(0.25)))
            .collect();
        let (s, _) = fit_rate(&lv).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_rejects_degenerate_input() {
        assert!(matches!(
            fit_rate(&[(0.1, 1.0, 0.1), (0.01, 0.5, 0.1)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_rate(&[(0.1, 1.0, 0.1), (0.01, 0.0, 0.1), (0.001, 0.1, 0.1)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn json_floats_have_17_digits() {
        let s = to_json_line(&serde_json::json!({"a": 0.1, "b": [1.0, f64::NAN]})).unwrap();
        assert_eq!(
            s,
            r#"{"a":1.0000000000000001e-1,"b":[1.0000000000000000e0,null]}"#
        );
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn config_defaults_and_toml() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            [model]
            name = "example1"
            x0 = [0.5]
            [harness]
            eps = [0.5, 0.25, 0.125]
            n_paths = 4
            "#,
        )
        .unwrap();
        assert_eq!(c.model.name, "example1");
        assert_eq!(c.kernel.h_slow, 1e-3);
        assert_eq!(c.harness.n_paths, 4);
        assert!(ExperimentConfig::from_toml_str("[model]\nnmae = \"x\"").is_err());
    }

    #[test]
    fn config_validation() {
        let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
        let mut c = ExperimentConfig::default();
        assert!(c.validate(&sys).is_ok());
        c.harness.eps = vec![0.01, 0.1];
        assert!(c.validate(&sys).is_err());
        c.harness.eps = vec![1.5];
        assert!(matches!(
            c.validate(&sys),
            Err(Error::EpsilonOutOfRange { .. })
        ));
        c.harness.eps = vec![0.1];
        c.harness.n_paths = 1;
        assert!(c.validate(&sys).is_err());
        let sys1 = BuiltinModel::Example2 { lambda1: 1.0 }.system();
        let mut c = ExperimentConfig::default();
        c.harness.eps = vec![0.2, 0.1, 0.05];
        c.harness.p = 20.0;
        assert!(c.validate(&sys1).is_err());
    }

    #[test]
    fn default_delta_is_on_grid() {
        let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
        let c = ExperimentConfig::default();
        let d = c.default_delta(&sys, 1e-3);
        assert!(integer_ratio(d, 1e-3).is_some());
        // γ̃ = 2/3 → 1e-3^(2/3) = 0.01
        assert!((d - 0.01).abs() < 1e-12);
    }
}
