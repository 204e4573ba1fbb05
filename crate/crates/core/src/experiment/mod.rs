//! Experiment configuration, training and evaluation runs, and result
//! reporting. The command-line binary is a thin layer over this module.

mod config;
mod record;
mod run;

pub use config::{
    ExperimentConfig, ModelOverrides, Overrides, Plan, TrainOverrides, DATASET_ROOT_ENV,
    DEFAULT_DATASET, DEFAULT_HORIZONS, DEFAULT_LOOKBACK, DEFAULT_SEEDS,
};
pub use record::{
    append_record, emit_results, read_records, records_from_csv, ReportFormat, ResultRecord,
};
pub use run::{
    checkpoint_path, format_grad_report, load_run, log_path, results_path, run_eval, run_gradcheck,
    run_train, LoadedRun, TrainOutcome,
};
