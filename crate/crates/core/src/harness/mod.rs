//! Experiment orchestration: config files, multi-seed runs, metric streams
//! and run comparison.

mod compare;
mod config;
mod run;

pub use compare::{compare, ComparisonReport, DiffRow, Stat, VariantSummary};
pub use config::{ExperimentConfig, RetentionSettings};
pub use run::{run, run_single, write_reward_curve, Manifest, MetricRow, RunRecord, RunResult, RunStatus};
