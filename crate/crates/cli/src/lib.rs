//! Scenario runner, gas reporting, and audit tooling for the accord ledger.
//!
//! The library side exists so integration tests can drive whole scenarios
//! in-process; the `accord` binary is a thin argument parser over it.

pub mod audit;
pub mod report;
pub mod runner;
pub mod scenario;
