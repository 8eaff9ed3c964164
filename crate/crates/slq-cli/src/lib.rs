//! Command-line harness for the `slq-core` solvers: strict JSON problem
//! configs, seven check/solve workflows, an independent dense oracle, and
//! byte-deterministic reports.

pub mod commands;
pub mod config;
pub mod oracle;
pub mod report;
