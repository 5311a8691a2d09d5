//! Scenario configuration, the simulation loop and its trace output.

pub mod config;
pub mod control;
pub mod sim;
pub mod trace;

pub use config::ScenarioConfig;
pub use control::pd_control;
pub use sim::{configured_escape_time, fused_steady_state, run, run_with, SimOptions};
pub use trace::{ControlMode, Episode, RunSummary, SimTrace, TraceRow, CSV_HEADER};
