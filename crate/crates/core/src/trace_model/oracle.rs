use std::collections::BTreeMap;

use super::{OpClass, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleEntry {
    pub taken: bool,
    pub target_pc: u64,
}

/// Recorded outcome of every dynamic conditional branch, keyed by trace seq.
/// Drives the perfect-prediction machine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchOracle {
    outcomes: BTreeMap<u64, OracleEntry>,
}

impl BranchOracle {
    pub fn get(&self, seq: u64) -> Option<OracleEntry> {
        self.outcomes.get(&seq).copied()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

pub fn capture_branch_oracle(records: &[TraceRecord]) -> BranchOracle {
    BranchOracle {
        outcomes: records
            .iter()
            .filter(|r| r.op == OpClass::BranchCond)
            .map(|r| (r.seq, OracleEntry { taken: r.taken, target_pc: r.target_pc }))
            .collect(),
    }
}
