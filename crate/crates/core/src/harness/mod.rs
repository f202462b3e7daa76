//! Scenario runner, metrics, and benchmark suite.

pub mod bench;
pub mod config;
pub mod report;
pub mod runner;

pub use config::{AttackSpec, ChannelSpec, KernelFault, Mutation, RunConfig};
pub use report::{emit_report, render_csv, CsvRow, RunMetrics, VariantMetrics, CSV_COLUMNS};
pub use runner::{run_native, run_repeated, run_scenario};
