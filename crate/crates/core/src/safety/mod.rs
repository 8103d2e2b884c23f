//! Fault injection, fail-operational evaluation, independence checks and
//! ASIL decomposition checking.

pub mod asil;
mod eval;
pub mod faults;
pub mod independence;
pub mod probe;
pub mod report;

pub use asil::{check_decomposition, rank_sum_allows, table_allows, ArchGraph, AsilLevel, Verdict};
pub use eval::{fail_operational_eval, snr_enrichment_eval, DegradationReport, ScenarioResult, ScenarioStatus, SnrRow};
pub use faults::{default_scenarios, inject_fault, triple_blackout, FaultKind, FaultSpec, Scenario};
pub use independence::{functional_check, structural_check, verify_independence, IndependenceReport};
pub use probe::{single_modality_probe, ProbeResult};
pub use report::{render_report, render_summary, Report};
