//! Experiment configs, seeded sweep execution and result files.

pub mod config;
pub mod output;
pub mod run;

pub use config::{defaults_help, parse_config, ExperimentConfig, ExperimentKind};
pub use output::{emit_csv, read_csv, SweepResultRow, CSV_HEADER, NO_DIFFICULTY};
pub use run::{
    cell_seed, run_experiment, seed_root, summarize, summary_table, write_outputs, KnobSummary,
    RunOutcome,
};
