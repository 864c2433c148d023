//! Scenario files, the simulation runner, trace audits and reports.

pub mod audit;
pub mod corpus;
pub mod report;
pub mod run;
pub mod scenario;

pub use audit::{audit, AuditReport, Verdict};
pub use report::RunReport;
pub use run::{run, run_with_seed, EndReason, Run};
pub use scenario::{Scenario, ScenarioError};
