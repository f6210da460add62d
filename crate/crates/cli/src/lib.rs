//! Command-line orchestration for the stick-or-switch evaluation harness:
//! declarative configs, end-to-end runs with crash-safe transcript logs,
//! network-free simulation, and report recomputation.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_report, cmd_run, cmd_simulate, cmd_validate, format_summary, CliError, RunOutcome,
    ValidationReport,
};
pub use config::{RespondentKind, RunConfig};
