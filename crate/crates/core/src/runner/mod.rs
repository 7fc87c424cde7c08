//! Experiment configs and their execution.

mod config;
mod scenario;
mod summary;

pub use config::*;
pub use scenario::{build_federation, build_nodes, output_dir_for, prepare, run_experiment, student_layout, Prepared};
pub use summary::{emit_summary, render_report, summarize_rows, RunSummary};
