use serde::{Deserialize, Serialize};

use crate::fetch_scheduler::{FetchPolicy, PolicyKind};
use crate::predictors::{BtbConfig, ConfidenceConfig, GshareConfig};
use crate::rename::DEFAULT_PHYS_TAGS;
use crate::thread_manager::{PathId, DEFAULT_MAX_BRANCH_LEVELS};
use crate::trace_model::OpClass;

use super::SimError;

/// A pool of identical pipelined units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub count: usize,
    pub latency: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitClass {
    IntAlu,
    Branch,
    LoadStore,
    MulDiv,
    FloatSpecial,
}

impl UnitClass {
    pub const ALL: [UnitClass; 5] =
        [UnitClass::IntAlu, UnitClass::Branch, UnitClass::LoadStore, UnitClass::MulDiv, UnitClass::FloatSpecial];

    pub fn of(op: OpClass) -> Self {
        match op {
            OpClass::IntAlu => UnitClass::IntAlu,
            OpClass::BranchCond | OpClass::BranchUncond => UnitClass::Branch,
            OpClass::Load | OpClass::Store => UnitClass::LoadStore,
            OpClass::MulDiv => UnitClass::MulDiv,
            OpClass::FloatSpecial => UnitClass::FloatSpecial,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitClass::IntAlu => "int_alu",
            UnitClass::Branch => "branch",
            UnitClass::LoadStore => "load_store",
            UnitClass::MulDiv => "mul_div",
            UnitClass::FloatSpecial => "float_special",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitConfig {
    pub int_alu: UnitSpec,
    pub branch: UnitSpec,
    pub load_store: UnitSpec,
    pub mul_div: UnitSpec,
    pub float_special: UnitSpec,
}

impl Default for UnitConfig {
    fn default() -> Self {
        UnitConfig {
            int_alu: UnitSpec { count: 40, latency: 1 },
            branch: UnitSpec { count: 40, latency: 1 },
            load_store: UnitSpec { count: 40, latency: 2 },
            mul_div: UnitSpec { count: 20, latency: 5 },
            float_special: UnitSpec { count: 40, latency: 3 },
        }
    }
}

impl UnitConfig {
    pub fn get(&self, class: UnitClass) -> UnitSpec {
        match class {
            UnitClass::IntAlu => self.int_alu,
            UnitClass::Branch => self.branch,
            UnitClass::LoadStore => self.load_store,
            UnitClass::MulDiv => self.mul_div,
            UnitClass::FloatSpecial => self.float_special,
        }
    }

    pub fn get_mut(&mut self, class: UnitClass) -> &mut UnitSpec {
        match class {
            UnitClass::IntAlu => &mut self.int_alu,
            UnitClass::Branch => &mut self.branch,
            UnitClass::LoadStore => &mut self.load_store,
            UnitClass::MulDiv => &mut self.mul_div,
            UnitClass::FloatSpecial => &mut self.float_special,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub policy: PolicyKind,
    pub fetch_width: usize,
    /// Slice size for selective DEE.
    pub target_ipc: usize,
    pub max_branch_levels: usize,
    pub window_size: usize,
    pub issue_width: usize,
    pub writeback_width: usize,
    pub complete_width: usize,
    pub commit_width: usize,
    /// Cycles from fetch to the earliest dispatch.
    pub frontend_depth: u64,
    pub units: UnitConfig,
    pub gshare: GshareConfig,
    pub btb: BtbConfig,
    pub confidence: ConfidenceConfig,
    /// Rename tags available beyond the 32 architectural ones.
    pub phys_tags: usize,
    pub warmup_instructions: u64,
    /// `None` measures everything after the warm-up.
    pub measure_instructions: Option<u64>,
    /// Cycles without a commit before the run is declared stuck.
    pub stall_limit: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            policy: PolicyKind::DynamicDee,
            fetch_width: 32,
            target_ipc: 8,
            max_branch_levels: DEFAULT_MAX_BRANCH_LEVELS,
            window_size: 4096,
            issue_width: 64,
            writeback_width: 128,
            complete_width: 128,
            commit_width: 128,
            frontend_depth: 1,
            units: UnitConfig::default(),
            gshare: GshareConfig::default(),
            btb: BtbConfig::default(),
            confidence: ConfidenceConfig::default(),
            phys_tags: DEFAULT_PHYS_TAGS,
            warmup_instructions: 0,
            measure_instructions: None,
            stall_limit: 100_000,
        }
    }
}

impl MachineConfig {
    pub fn with_policy(policy: PolicyKind) -> Self {
        MachineConfig { policy, ..MachineConfig::default() }
    }

    pub fn fetch_policy(&self) -> FetchPolicy {
        FetchPolicy {
            kind: self.policy,
            fetch_width: self.fetch_width,
            target_ipc: self.target_ipc,
            max_branch_levels: self.max_branch_levels,
        }
    }

    /// Rename and dispatch bandwidth per cycle.
    pub fn dispatch_width(&self) -> usize {
        self.fetch_width
    }

    /// Per-path buffer between fetch and dispatch.
    pub fn fetch_buffer(&self) -> usize {
        2 * self.fetch_width
    }

    pub fn retire_width(&self) -> usize {
        self.complete_width.min(self.commit_width)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(SimError::Config { field, reason: "must be at least 1".into() })
            } else {
                Ok(())
            }
        };
        positive("fetch_width", self.fetch_width)?;
        positive("target_ipc", self.target_ipc)?;
        positive("window_size", self.window_size)?;
        positive("issue_width", self.issue_width)?;
        positive("writeback_width", self.writeback_width)?;
        positive("complete_width", self.complete_width)?;
        positive("commit_width", self.commit_width)?;
        positive("phys_tags", self.phys_tags)?;
        for class in UnitClass::ALL {
            let u = self.units.get(class);
            if u.count == 0 || u.latency == 0 {
                return Err(SimError::Config {
                    field: "units",
                    reason: format!("{} needs at least one unit with latency at least 1", class.name()),
                });
            }
        }
        if self.frontend_depth == 0 {
            return Err(SimError::Config { field: "frontend_depth", reason: "must be at least 1".into() });
        }
        if self.max_branch_levels > PathId::MAX_LEN {
            return Err(SimError::Config {
                field: "max_branch_levels",
                reason: format!("at most {} supported", PathId::MAX_LEN),
            });
        }
        if self.measure_instructions == Some(0) {
            return Err(SimError::Config { field: "measure_instructions", reason: "must be at least 1".into() });
        }
        if self.policy == PolicyKind::SelectiveDee && !self.fetch_width.is_multiple_of(self.target_ipc) {
            return Err(SimError::Config {
                field: "target_ipc",
                reason: format!("fetch_width {} is not a multiple of {}", self.fetch_width, self.target_ipc),
            });
        }
        if self.stall_limit == 0 {
            return Err(SimError::Config { field: "stall_limit", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}
