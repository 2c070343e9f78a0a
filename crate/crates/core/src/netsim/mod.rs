//! Discrete-event network simulator and the experiment runner.

mod audit;
mod engine;
pub mod report;
mod run;

pub use audit::{privacy_audit, AuditPolicy, CompletePolicy, Violation};
pub use engine::{
    Crash, CrashTime, Ctx, Decision, Node, NodeRecord, PlaintextObservation, Schedule, SimConfig,
    SimOutcome, Simulation, Wire,
};
pub use report::{SimReport, Termination, SCHEMA_VERSION};
pub use run::{run, run_resolved, run_trials};
