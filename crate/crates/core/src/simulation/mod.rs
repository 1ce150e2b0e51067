//! Data-generating processes, the Monte Carlo runner and table emission.

mod dgp;
mod experiment;
mod table;

pub use dgp::{generate, generate_replicate, DgpSpec, Process, MEDIATOR_STRUCTURAL_FLAG, MIN_SAMPLE_SIZE};
pub use experiment::{
    run_experiment, run_experiment_with, EffectSummary, Estimator, EstimatorSummary, ExperimentOptions, ExperimentResult,
    McCell, TestRequest, TestSummary, MIN_EXPERIMENT_REPLICATES,
};
pub use table::{cell, emit_table, signif3, TableFormat};
