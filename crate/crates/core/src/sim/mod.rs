//! Deterministic simulation of clients, servers and nodes over a virtual
//! clock, plus the analytic with/without-agents timing model.
//!
//! The simulator hosts the very same containers as the TCP runtime. Every
//! message is encoded to a frame and decoded again on its way through a
//! link, and compute time is derived from the work a job actually did.

pub mod engine;
pub mod script;
pub mod timing;

pub use engine::{
    file_seed, generate_file, run_scenario, SimActor, Simulation, TraceEvent, TraceRecord,
};
pub use script::{parse_scenario, Scenario, ScriptError, ScriptEvent};
pub use timing::{
    emit_report, parse_report, run_with_agents, run_without_agents, CostModel, LinkSpec, Phase,
    ScenarioLabel, TimingReport,
};
