//! Experiment configuration, orchestration, persistence, and reporting.

pub mod config;
pub mod report;
pub mod run;
pub mod svg;

pub use config::ExperimentConfig;
pub use report::{
    dataset_to_csv, emit_csv, emit_dataset_csv, parse_dataset_csv, parse_report_csv,
    report_to_csv,
};
pub use run::{run_experiment, summarize, RunReport, RunRow, SummaryRow};
pub use svg::{boxplot_svg, emit_boxplot_svg};
