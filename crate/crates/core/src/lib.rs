//! Simulation and diagnostics for slow-fast stochastic differential equations
//! and their averaged limits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod frozen;
pub mod harness;
pub mod hypotheses;
pub mod kernel;
pub mod model;
pub mod noise;

pub use averaging::{
    bbar_lookup, build_table, simulate_averaged, AveragedDriftTable, AveragedPath, BbarProvider,
    GridSpec, OnDemand,
};
pub use error::{CoefficientKind, Error, Result};
pub use frozen::{
    contraction_test, ergodic_convergence_test, estimate_bbar, estimate_bbar_at, moment_bound_test,
    ContractionReport, EstimationOpts, FrozenEstimate,
};
pub use harness::{
    fit_rate, run_convergence, run_convergence_with, run_khasminskii_diagnostics,
    run_moment_uniformity, run_rescaling_equivalence, ConvergenceReport, ExperimentConfig,
    KhasminskiiReport, RescalingOpts, RescalingReport,
};
pub use hypotheses::{check, CheckReport, Condition, SampleSpec};
pub use kernel::{
    simulate_auxiliary, simulate_block_fast, simulate_coupled, simulate_frozen, step_tamed,
    AuxPaths, FastPath, InitialState, PathPair, SchemeKind, StepScheme,
};
pub use model::{
    BuiltinModel, CoefficientSystem, Coefficients, Dims, FrozenSystem, HypothesisParams,
    ModelRegistry,
};
pub use noise::NoiseBundle;
