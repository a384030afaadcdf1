//! Multi-node scenarios: assembly, emulated execution, reporting and the
//! scope-isolation audit.

mod assembly;
mod report;
mod script;
mod sim;
mod verdict;

pub use assembly::{build_assembly, AssembledInstance, NodeAssembly, Wiring};
pub use report::{ExpectationResult, InstanceReport, Metrics, ScenarioReport};
pub use script::{load_scenario, parse_scenario, AppSpec, Behavior, LinkSpec, Phase, PhaseAction, ScenarioScript};
pub use sim::{run_scenario, wire_nesting, RunOptions, SIM_EPOCH};
pub use verdict::{audit_scope_isolation, AuditVerdict, InstanceFacts, Verdict};
