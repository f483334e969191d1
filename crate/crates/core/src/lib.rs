//! Trace-driven cycle-level simulator of a wide-fetch multi-path processor.
//!
//! A trace of dynamic instructions drives a six-stage out-of-order machine
//! whose front end can follow both arms of conditional branches. Six fetch
//! policies share the machine: two single-path baselines and four eager
//! variants that split fetch bandwidth across speculative paths.

pub mod cli;
pub mod fetch_scheduler;
pub mod metrics_report;
pub mod pipeline;
pub mod predictors;
pub mod rename;
pub mod thread_manager;
pub mod trace_model;

pub use fetch_scheduler::{allocate_fetch, FetchPolicy, PolicyKind};
pub use pipeline::{compute_ipc, run, MachineConfig, RunStats, SimError};
pub use thread_manager::PathId;
pub use trace_model::{TraceRecord, TraceSpec};

/// Thread Management Table over `f64` confidences.
pub type ThreadTable = thread_manager::ThreadTable<f64>;
/// Machine with `f64` path confidences.
pub type Machine<'a> = pipeline::Machine<'a, f64>;
/// Candidate with an `f64` confidence.
pub type FetchCandidate = fetch_scheduler::FetchCandidate<f64>;
