//! Independent reference models shared by the integration and acceptance
//! tests. Nothing here calls into the code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mpsim::rename::RenameTag;
use mpsim::trace_model::{generate_synthetic_trace, TraceRecord, TraceSpec, NUM_ARCH_REGS};
use mpsim::PathId;

/// Confidence counter update written straight from the rule table.
pub fn confidence_rule(value: u8, correct: bool) -> u8 {
    if correct {
        if value < 8 {
            8
        } else if value == 15 {
            15
        } else {
            value + 1
        }
    } else if value < 8 {
        value + 1
    } else {
        7
    }
}

/// Architectural dataflow of a trace executed one instruction at a time:
/// for each record the producing sequence number of every source, and the
/// last writer of every register at the end.
pub struct InOrder {
    pub sources: Vec<Vec<Option<u64>>>,
    pub final_writers: Vec<Option<u64>>,
}

pub fn interpret(trace: &[TraceRecord]) -> InOrder {
    let mut last = vec![None; NUM_ARCH_REGS];
    let mut sources = Vec::with_capacity(trace.len());
    for r in trace {
        sources.push(r.src_regs.iter().map(|&s| last[s as usize]).collect());
        for &d in &r.dst_regs {
            last[d as usize] = Some(r.seq);
        }
    }
    InOrder { sources, final_writers: last }
}

pub fn trace(seed: u64, instructions: u64, hard: f64) -> Vec<TraceRecord> {
    generate_synthetic_trace(&TraceSpec {
        instruction_count: instructions,
        hard_branch_fraction: hard,
        seed,
        ..TraceSpec::default()
    })
    .expect("valid spec")
}

pub fn bits(p: &PathId) -> Vec<bool> {
    p.bits().collect()
}

/// Bit-by-bit prefix test.
pub fn has_prefix(p: &PathId, prefix: &[bool]) -> bool {
    let b = bits(p);
    b.len() >= prefix.len() && b[..prefix.len()] == *prefix
}

pub fn drop_bit(p: &PathId, at: usize) -> PathId {
    let mut b = bits(p);
    b.remove(at);
    PathId::from_bits(&b)
}

/// Every path keeps the full ordered list of register writes visible to it.
/// A fork copies the list; resolution keeps the winner's list under the
/// parent's id.
pub struct LinearRename {
    pub writes: BTreeMap<PathId, Vec<(u8, RenameTag)>>,
    pub committed: Vec<RenameTag>,
}

impl LinearRename {
    pub fn new(committed: &[RenameTag]) -> Self {
        LinearRename { writes: BTreeMap::from([(PathId::root(), Vec::new())]), committed: committed.to_vec() }
    }

    pub fn write(&mut self, path: &PathId, reg: u8, tag: RenameTag) {
        self.writes.get_mut(path).expect("known path").push((reg, tag));
    }

    pub fn fork(&mut self, parent: &PathId) {
        let base = self.writes[parent].clone();
        let mut b = bits(parent);
        for arm in [true, false] {
            b.push(arm);
            self.writes.insert(PathId::from_bits(&b), base.clone());
            b.pop();
        }
    }

    pub fn resolve(&mut self, parent: &PathId, taken: bool) {
        let level = parent.len();
        let mut win = bits(parent);
        win.push(taken);
        let mut lose = bits(parent);
        lose.push(!taken);
        let old = std::mem::take(&mut self.writes);
        for (p, w) in old {
            if has_prefix(&p, &lose) || p == *parent {
                continue;
            }
            let p = if has_prefix(&p, &win) { drop_bit(&p, level) } else { p };
            self.writes.insert(p, w);
        }
    }

    pub fn lookup(&self, path: &PathId, reg: u8) -> RenameTag {
        self.writes[path].iter().rev().find(|(r, _)| *r == reg).map_or(self.committed[reg as usize], |(_, t)| *t)
    }
}
