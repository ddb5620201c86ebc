//! Configuration, persistence and the train / attack / evaluate pipeline.

pub mod checkpoint;
mod config;

pub use config::{
    AttackSpec, DatasetSpec, ExperimentConfig, FileDataset, GuidanceKind, LmKind, MetricOptions, Split, SweepSpec,
    SweepStrategy, OUTPUT_ROOT_ENV,
};
mod pipeline;

pub use pipeline::{
    cmd_attack, cmd_evaluate, cmd_sweep, cmd_train, evaluate_results, load_run, prepare_data, read_results,
    report_paths, run_attacks, scatter_rows, show_examples, sweep_points, sweep_rows, write_results, ArtifactEntry,
    Manifest, PreparedData, ResultLine, RunPaths, ScatterRow, SweepPoint, SweepRow, TrainedRun, TrainingSummary,
};
