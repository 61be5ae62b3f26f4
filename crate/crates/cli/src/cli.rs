use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slowfast_core::harness::ProviderKind;
use slowfast_core::{ExperimentConfig, SchemeKind};

#[derive(Debug, Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Simulate slow-fast SDEs, estimate averaged drifts and measure averaging errors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one coupled path and print it as CSV.
    Simulate(SimulateArgs),
    /// Estimate b̄(t, x) from the frozen equation.
    Freeze(FreezeArgs),
    /// Build or inspect an averaged-drift table.
    #[command(subcommand)]
    AvgTable(AvgTableCommand),
    /// Check a structural condition on sampled points.
    Check(CheckArgs),
    /// Strong-error convergence study across ε.
    Converge(ConvergeArgs),
    /// Gaps between the coupled system and the Khasminskii auxiliary processes.
    Khasminskii(KhasminskiiArgs),
    /// Compare the ε-rescaled fast process with the frozen process.
    RescaleTest(RescaleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Explicit,
    Tamed,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Explicit => SchemeKind::Explicit,
            SchemeArg::Tamed => SchemeKind::Tamed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    Analytic,
    Table,
    Ondemand,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Analytic => ProviderKind::Analytic,
            ProviderArg::Table => ProviderKind::Table,
            ProviderArg::Ondemand => ProviderKind::Ondemand,
        }
    }
}

/// Options shared by every command that reads an experiment config. Each
/// flag overrides the matching config key.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in model: example1, example2 or example3 [model.name].
    #[arg(long)]
    pub model: Option<String>,
    /// [model.lambda1]
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Initial slow state, comma separated [model.x0].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial fast state, comma separated [model.y0].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Option<Vec<f64>>,
    /// [kernel.h_slow]
    #[arg(long)]
    pub h_slow: Option<f64>,
    /// [kernel.fast_ratio]
    #[arg(long)]
    pub fast_ratio: Option<f64>,
    /// [kernel.scheme]
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// [harness.horizon]
    #[arg(long)]
    pub horizon: Option<f64>,
    /// [harness.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [harness.n_paths]
    #[arg(long)]
    pub paths: Option<usize>,
    /// [harness.workers]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory [harness.output].
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.model {
            c.model.name = v.clone();
        }
        if let Some(v) = self.lambda1 {
            c.model.lambda1 = v;
        }
        if let Some(v) = &self.x0 {
            c.model.x0 = v.clone();
        }
        if let Some(v) = &self.y0 {
            c.model.y0 = v.clone();
        }
        if let Some(v) = self.h_slow {
            c.kernel.h_slow = v;
        }
        if let Some(v) = self.fast_ratio {
            c.kernel.fast_ratio = v;
        }
        if let Some(v) = self.scheme {
            c.kernel.scheme = v.into();
        }
        if let Some(v) = self.horizon {
            c.harness.horizon = v;
        }
        if let Some(v) = self.seed {
            c.harness.seed = v;
        }
        if let Some(v) = self.paths {
            c.harness.n_paths = v;
        }
        if self.workers.is_some() {
            c.harness.workers = self.workers;
        }
        if self.output.is_some() {
            c.harness.output = self.output.clone();
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scale separation (defaults to the first entry of [harness.eps]).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Path index within the seed.
    #[arg(long, default_value_t = 0)]
    pub path: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

/// Estimation flags; each overrides the matching key of `[frozen]`.
#[derive(Debug, Args, Clone)]
pub struct FrozenFlags {
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long)]
    pub sample_time: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Step of the frozen chains [frozen.h].
    #[arg(long)]
    pub h: Option<f64>,
    /// Seed of the frozen chains [frozen.seed].
    #[arg(long)]
    pub chain_seed: Option<u64>,
    /// Disable the `|y|²` control variate.
    #[arg(long)]
    pub no_control_variate: bool,
}

impl FrozenFlags {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        if self.burn_in.is_some() {
            c.frozen.burn_in = self.burn_in;
        }
        if let Some(v) = self.sample_time {
            c.frozen.sample_time = v;
        }
        if let Some(v) = self.chains {
            c.frozen.n_chains = v;
        }
        if let Some(v) = self.h {
            c.frozen.h = v;
        }
        if let Some(v) = self.chain_seed {
            c.frozen.seed = v;
        }
        if self.no_control_variate {
            c.frozen.control_variate = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct FreezeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub frozen: FrozenFlags,
    #[arg(long, allow_hyphen_values = true)]
    pub t: f64,
    /// Comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    pub x: Vec<f64>,
    /// Value of `W¹` seen by `b` (zero by default).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub w1: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum AvgTableCommand {
    /// Estimate b̄ on a (t, x) grid and save it.
    Build(Box<TableBuildArgs>),
    /// Print a table's header and summary statistics.
    Inspect {
        #[arg(value_name = "FILE")]
        table: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TableBuildArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub frozen: FrozenFlags,
    /// Destination file.
    #[arg(long, value_name = "FILE")]
    pub table: PathBuf,
    /// [averaging.t_points]
    #[arg(long)]
    pub t_points: Option<usize>,
    /// [averaging.x_points], comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x_points: Option<Vec<usize>>,
    /// [averaging.box_lo], comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub box_lo: Option<Vec<f64>>,
    /// [averaging.box_hi], comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub box_hi: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// h1i, h1ii, h1iii, h2i, h2ii or ak:K.
    #[arg(long)]
    pub condition: String,
    /// Half-width of the sampled x and y box.
    #[arg(long = "box", default_value_t = 10.0)]
    pub half: f64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub frozen: FrozenFlags,
    /// ε levels, comma separated and decreasing [harness.eps].
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// [harness.p]
    #[arg(long)]
    pub p: Option<f64>,
    /// [averaging.provider]
    #[arg(long, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Precomputed table [averaging.table].
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Write every simulated path under `<output>/paths`.
    #[arg(long)]
    pub dump_paths: bool,
}

#[derive(Debug, Args)]
pub struct KhasminskiiArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scale separation (defaults to the last entry of [harness.eps]).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Block lengths, comma separated [harness.deltas]; defaults to ε^γ̃.
    #[arg(long, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RescaleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub t: f64,
    /// Frozen slow state (defaults to [model.x0]).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Horizon on the fast clock.
    #[arg(long, default_value_t = 1.0)]
    pub horizon_s: f64,
    /// Step on the fast clock.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Reporting times.
    #[arg(long, default_value_t = 10)]
    pub grid: usize,
}
