//! Command-line front end for `moreau-core`: JSON run configs, synthetic
//! dataset export, envelope sampling and side-by-side solver comparison.
//!
//! Exit codes: 0 when the solver converged, 2 when it stopped at the
//! iteration budget, 1 on any error.

pub mod commands;
pub mod config;
pub mod data;

pub use commands::{cmd_compare, cmd_envelope, cmd_gen_data, cmd_run, ComparisonRow, GenSpec, RunSummary, Status};
pub use config::{parse_json, CompareConfig, FunctionSpec, ProblemSpec, RunConfig};
