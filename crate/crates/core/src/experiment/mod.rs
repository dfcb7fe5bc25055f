//! Configured end-to-end runs, parameter sweeps and their on-disk reports.

mod config;
mod pipeline;
mod report;

pub use config::{ClassifierConfig, DatasetConfig, ExperimentConfig, RunConfig, SplitConfig, SweepConfig};
pub use pipeline::{
    aggregate, cache_dir, checkpoint_hash, default_sides, default_threshold_schedule, prepare_models, run_pipeline,
    run_seed, score_fusion, stage_classify, stage_evaluate, stage_split, stage_train_annc, stage_train_disc,
    sweep_neighborhood, sweep_threshold, training_features, Aggregate, Dataset, ModelCache, RunReport, SeedModels,
    SeedRun, StageError, SweepRow, STAGES,
};
pub use report::{aggregate_metrics_csv, emit_report, emit_seed, metrics_csv, summary_csv, sweep_csv, timings_csv};
