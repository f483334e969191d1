use serde::{Deserialize, Serialize};

use crate::fetch_scheduler::PolicyKind;
use crate::predictors::ConfusionMatrix;

use super::SimError;

/// Direction-predictor record for one static conditional branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStat {
    pub pc: u64,
    pub executions: u64,
    pub mispredictions: u64,
}

/// Whole-run op accounting, warm-up included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTotals {
    pub fetched: u64,
    pub committed: u64,
    pub squashed: u64,
    pub in_flight: u64,
}

/// Results of one run. Counters cover the measurement window unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub policy: PolicyKind,
    pub fetch_width: usize,
    pub max_levels: usize,
    pub warmup_instructions: u64,
    pub cycles: u64,
    pub committed_instructions: u64,
    /// Flushes caused by conditional branches: predicted ones that went the
    /// wrong way and fall-through fetches past a taken branch that missed in
    /// the BTB.
    pub recoveries: u64,
    /// Flushes caused by unconditional branches that missed in the BTB.
    pub uncond_recoveries: u64,
    pub cond_branches: u64,
    /// Conditional branches the direction predictor got wrong.
    pub cond_mispredicted: u64,
    pub forks: u64,
    pub btb_misses: u64,
    pub confusion: ConfusionMatrix,
    pub per_branch: Vec<BranchStat>,
    pub peak_active_threads: u64,
    pub mean_active_threads: f64,
    pub rename_allocations: u64,
    pub rename_stalls: u64,
    pub window_stalls: u64,
    pub totals: OpTotals,
}

impl RunStats {
    pub fn empty(policy: PolicyKind, fetch_width: usize, max_levels: usize) -> Self {
        RunStats {
            policy,
            fetch_width,
            max_levels,
            warmup_instructions: 0,
            cycles: 0,
            committed_instructions: 0,
            recoveries: 0,
            uncond_recoveries: 0,
            cond_branches: 0,
            cond_mispredicted: 0,
            forks: 0,
            btb_misses: 0,
            confusion: ConfusionMatrix::default(),
            per_branch: Vec::new(),
            peak_active_threads: 0,
            mean_active_threads: 0.0,
            rename_allocations: 0,
            rename_stalls: 0,
            window_stalls: 0,
            totals: OpTotals::default(),
        }
    }
}

/// Committed instructions per cycle over the measurement window.
pub fn compute_ipc(stats: &RunStats) -> Result<f64, SimError> {
    if stats.cycles == 0 {
        return Err(SimError::Undefined("IPC over zero cycles"));
    }
    Ok(stats.committed_instructions as f64 / stats.cycles as f64)
}
