//! Experiment plumbing: flat `key = value` configuration, expert
//! construction, run directories with per-epoch and summary CSV files,
//! bootstrap intervals, SVG plots, parallel sweeps and the command line.

pub mod cli;
pub mod config;
pub mod expert;
pub mod metrics;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::{ExpertConfig, ExpertKind, Method, Profile, RunConfig};
pub use expert::{build_expert, expert_return, ExpertPolicy};
pub use metrics::{
    aggregate, bootstrap_ci, emit_metrics, read_summary, relative_return, spearman, summarize_run,
    AggregateRow, SummaryRow,
};
pub use plot::{plot_svg, Selection};
pub use run::{execute, prepare_expert, write_run_dir, ExpertArtifacts, RunOutcome};
pub use sweep::{noise_ablation, parallel_map, run_sweep, NoiseScore, SweepSpec};
