//! Experiment driver: synthetic data, configuration, the per-seed round
//! loop and result files.

pub mod config;
pub mod emit;
pub mod run;
pub mod synthetic;

pub use config::{DatasetSpec, ExperimentConfig, Strategy};
pub use emit::{emit_results, read_results_csv, render_accuracy_svg, result_rows, results_csv_string, ResultRow};
pub use run::{
    configure_threads_from_env, load_csv_dataset, load_dataset, run_experiment, run_experiment_on, run_seed,
    ExperimentResult, LoadedData, RoundArtifacts, RoundRecord, SeedRun,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticParams};
