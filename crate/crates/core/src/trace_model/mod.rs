//! Dynamic instruction traces.
//!
//! A trace is the committed (correct-path) instruction stream of one program
//! run, with the ground-truth outcome of every branch. The simulator consumes
//! it record by record; speculative wrong-path work is derived from it.

mod generator;
mod io;
mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generator::{generate_synthetic_trace, OpMix, TraceSpec};
pub use io::{read_trace, read_trace_file, write_trace, write_trace_file, TRACE_HEADER};
pub use oracle::{capture_branch_oracle, BranchOracle, OracleEntry};

/// Number of architectural registers.
pub const NUM_ARCH_REGS: usize = 32;

/// Architectural register id, `0..NUM_ARCH_REGS`.
pub type ArchReg = u8;

/// Functional class of an instruction. Each class maps to one unit pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    IntAlu,
    BranchCond,
    BranchUncond,
    Load,
    Store,
    MulDiv,
    FloatSpecial,
}

impl OpClass {
    pub const ALL: [OpClass; 7] = [
        OpClass::IntAlu,
        OpClass::BranchCond,
        OpClass::BranchUncond,
        OpClass::Load,
        OpClass::Store,
        OpClass::MulDiv,
        OpClass::FloatSpecial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::IntAlu => "int_alu",
            OpClass::BranchCond => "branch_cond",
            OpClass::BranchUncond => "branch_uncond",
            OpClass::Load => "load",
            OpClass::Store => "store",
            OpClass::MulDiv => "mul_div",
            OpClass::FloatSpecial => "float_special",
        }
    }

    pub fn is_branch(self) -> bool {
        matches!(self, OpClass::BranchCond | OpClass::BranchUncond)
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpClass::ALL.iter().copied().find(|c| c.name() == s).ok_or_else(|| format!("unknown op class `{s}`"))
    }
}

/// One dynamic instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub pc: u64,
    pub op: OpClass,
    pub dst_regs: Vec<ArchReg>,
    pub src_regs: Vec<ArchReg>,
    /// Ground-truth direction. Only meaningful for branches.
    pub taken: bool,
    pub target_pc: u64,
    pub fallthrough_pc: u64,
}

impl TraceRecord {
    /// A non-branch record whose successor is `next_pc`.
    pub fn simple(seq: u64, pc: u64, op: OpClass, dst: &[ArchReg], src: &[ArchReg], next_pc: u64) -> Self {
        TraceRecord {
            seq,
            pc,
            op,
            dst_regs: dst.to_vec(),
            src_regs: src.to_vec(),
            taken: false,
            target_pc: next_pc,
            fallthrough_pc: next_pc,
        }
    }

    /// Address of the instruction that follows this one on the realized path.
    pub fn successor_pc(&self) -> u64 {
        if self.op.is_branch() && self.taken {
            self.target_pc
        } else {
            self.fallthrough_pc
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |reason: String| TraceError::InvalidRecord { seq: self.seq, reason };
        if self.dst_regs.len() > 2 {
            return Err(bad(format!("{} destination registers (max 2)", self.dst_regs.len())));
        }
        if self.src_regs.len() > 3 {
            return Err(bad(format!("{} source registers (max 3)", self.src_regs.len())));
        }
        if let Some(r) = self.dst_regs.iter().chain(&self.src_regs).find(|&&r| usize::from(r) >= NUM_ARCH_REGS) {
            return Err(bad(format!("register r{r} out of range 0..{NUM_ARCH_REGS}")));
        }
        match self.op {
            OpClass::BranchUncond if !self.taken => Err(bad("unconditional branch recorded as not taken".into())),
            op if !op.is_branch() && self.target_pc != self.fallthrough_pc => Err(bad(format!(
                "non-branch with distinct target {:#x} and fallthrough {:#x}",
                self.target_pc, self.fallthrough_pc
            ))),
            _ => Ok(()),
        }
    }
}

/// Checks per-record invariants, contiguous sequence numbers and that every
/// record's successor is the next record.
pub fn validate_trace(records: &[TraceRecord]) -> Result<(), TraceError> {
    for (i, rec) in records.iter().enumerate() {
        if rec.seq != i as u64 {
            return Err(TraceError::InvalidRecord {
                seq: rec.seq,
                reason: format!("sequence number out of order at position {i}"),
            });
        }
        rec.validate()?;
        if let Some(next) = records.get(i + 1) {
            if rec.successor_pc() != next.pc {
                return Err(TraceError::Incoherent { seq: rec.seq, successor: rec.successor_pc(), next_pc: next.pc });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid trace spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("invalid record {seq}: {reason}")]
    InvalidRecord { seq: u64, reason: String },
    #[error("record {seq} continues at {successor:#x} but the next record is at {next_pc:#x}")]
    Incoherent { seq: u64, successor: u64, next_pc: u64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
