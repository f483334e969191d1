//! Cycle-level engine: fetch, rename/dispatch, issue, execute, writeback,
//! complete.

mod config;
mod machine;
mod stats;

pub use config::{MachineConfig, UnitClass, UnitConfig, UnitSpec};
pub use machine::{run, run_with_log, BranchInfo, CommitLog, CommitRecord, InFlightOp, Machine, Producer, Stage};
pub use stats::{compute_ipc, BranchStat, OpTotals, RunStats};

use thiserror::Error;

use crate::predictors::PredictorError;
use crate::trace_model::TraceError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace has {available} instructions, run needs {needed}")]
    TraceTooShort { needed: u64, available: u64 },
    #[error("simulator fault at cycle {cycle}: {reason}")]
    Fault { cycle: u64, reason: String },
    #[error("{0} is undefined")]
    Undefined(&'static str),
}
