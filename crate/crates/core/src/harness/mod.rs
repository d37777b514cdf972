//! Experiment configuration, seeded execution, metric computation, and
//! structured output.

mod config;
mod output;
mod runner;

pub use config::{
    DatasetCfg, ExperimentConfig, LatencyCfg, LayerCfg, ModelCfg, OptimCfg, PartitionCfg,
    RoundsCfg, Sflv1PeriodCfg, TargetCfg,
};
pub use output::{
    compare, emit, load_summary, records_csv, CompareRow, CompareTable, EmitFormat,
};
pub use runner::{
    partition_report, prepare, rounds_to_target, run_experiment, run_prepared, ExperimentSetup,
    RoundRecord, RunResult, RunSummary,
};
