//! Reproducibility shell: configuration, checkpoints, result files and the
//! experiment runner.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, SCALING_RECORD, VERSION};
pub use config::{
    parse_config, parse_config_str, parse_family, write_echo, AdapterSection, AnalysisSection, CheckpointSection,
    CommcostSection, ExperimentConfig, ExperimentKind, FedSection, SuiteSection, TrainSection, ECHO_FILE,
};

mod experiment;
mod results;

pub use experiment::{
    client_data, compare_matrices, echo_path, fed_config, is_input_side, multitask_seeds, run_experiment, RunReport,
    CHECKPOINT_DIR,
};
pub use results::{
    config_hash, emit_gates, emit_ledger, emit_results, emit_summary, format_number, read_results, unix_now, Manifest,
    MetricRecord, GATES_FILE, LEDGER_FILE, MANIFEST_FILE, METRICS_FILE, METRIC_COLUMNS, SUMMARY_FILE,
};
