use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::fetch_scheduler::{
    allocate_fetch, select_fetch_pcs, should_fork, FetchCandidate, FetchPolicy, ForkDecision, PolicyKind,
};
use crate::predictors::{oracle_predict, Btb, ConfidenceClass, ConfidenceCounter, ConfidenceTable, Gshare};
use crate::rename::{RenameFile, RenameTag};
use crate::thread_manager::{ThreadKey, ThreadTable};
use crate::trace_model::{validate_trace, ArchReg, BranchOracle, OpClass, TraceRecord, NUM_ARCH_REGS};

use super::config::{MachineConfig, UnitClass};
use super::stats::{BranchStat, RunStats};
use super::SimError;

const NOT_READY: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Fetched,
    Dispatched,
    Issued,
    WrittenBack,
}

/// Predictor state captured when a conditional branch was fetched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchInfo {
    pub gshare_index: usize,
    pub gshare_taken: bool,
    pub confidence: ConfidenceClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Recovery {
    Cond,
    Uncond,
}

/// The op that wrote a register value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub seq: u64,
    pub correct_path: bool,
}

#[derive(Clone, Debug)]
pub struct InFlightOp {
    pub uid: u64,
    pub seq: u64,
    /// Thread that fetched the op. Follow merges with `ThreadTable::find`.
    pub node: ThreadKey,
    pub correct_path: bool,
    pub stage: Stage,
    pub unit: UnitClass,
    pub fetch_cycle: u64,
    pub wb_cycle: Option<u64>,
    pub dst_tags: Vec<(ArchReg, RenameTag)>,
    pub src_tags: Vec<RenameTag>,
    pub is_forked_branch: bool,
    pub branch: Option<BranchInfo>,
    src_producers: Vec<Option<Producer>>,
    /// Path history before this op.
    history: u64,
    recovery: Option<Recovery>,
    rename_mark: u64,
    wb_due: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitRecord {
    pub seq: u64,
    /// Producer of each source; `None` is the initial register value.
    pub sources: Vec<Option<Producer>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommitLog {
    pub records: Vec<CommitRecord>,
    /// Producer of each architectural register after the last commit.
    pub final_map: Vec<Option<Producer>>,
}

/// Fetch-side state of one thread path. The cursor indexes the trace; a path
/// off the recorded execution keeps replaying the records that follow its
/// divergence point, which the reconvergent code layout makes a faithful
/// stand-in for wrong-path work.
#[derive(Clone, Copy, Debug)]
struct PathState {
    cursor: usize,
    on_correct: bool,
    history: u64,
    resume_at: u64,
    buffered: usize,
}

fn push_history(h: u64, taken: bool) -> u64 {
    (h << 1) | u64::from(taken)
}

pub struct Machine<'a, F = f64> {
    cfg: MachineConfig,
    policy: FetchPolicy,
    trace: &'a [TraceRecord],
    oracle: &'a BranchOracle,
    now: u64,
    next_uid: u64,
    threads: ThreadTable<F>,
    paths: HashMap<ThreadKey, PathState>,
    node_ops: HashMap<ThreadKey, VecDeque<u64>>,
    ops: HashMap<u64, InFlightOp>,
    frontend: BTreeSet<u64>,
    waiting: BTreeSet<u64>,
    executing: BTreeSet<(u64, u64)>,
    correct_ops: HashMap<u64, u64>,
    window_count: usize,
    ready_at: Vec<u64>,
    producer: Vec<Option<Producer>>,
    rename: RenameFile,
    gshare: Gshare,
    btb: Btb,
    confidence: ConfidenceTable,
    next_commit: u64,
    target_commits: u64,
    warm_end: Option<u64>,
    last_commit_cycle: u64,
    done_at: Option<u64>,
    stats: RunStats,
    per_branch: BTreeMap<u64, BranchStat>,
    active_sum: u64,
    log: Option<CommitLog>,
}

impl<'a, F: Float> Machine<'a, F> {
    pub fn new(trace: &'a [TraceRecord], oracle: &'a BranchOracle, cfg: MachineConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let available = trace.len() as u64;
        let target = match cfg.measure_instructions {
            Some(m) => cfg.warmup_instructions + m,
            None => available.max(cfg.warmup_instructions + 1),
        };
        if available < target {
            return Err(SimError::TraceTooShort { needed: target, available });
        }
        validate_trace(trace)?;
        let rename = RenameFile::new(cfg.phys_tags);
        let tags = rename.total_tags();
        let mut ready_at = vec![NOT_READY; tags];
        ready_at[..NUM_ARCH_REGS].fill(0);
        let threads = ThreadTable::new(cfg.max_branch_levels, trace[0].pc);
        let root = threads.root_key();
        let mut stats = RunStats::empty(cfg.policy, cfg.fetch_width, cfg.max_branch_levels);
        stats.warmup_instructions = cfg.warmup_instructions;
        Ok(Machine {
            policy: cfg.fetch_policy(),
            gshare: Gshare::new(&cfg.gshare)?,
            btb: Btb::new(&cfg.btb)?,
            confidence: ConfidenceTable::new(&cfg.confidence)?,
            trace,
            oracle,
            now: 0,
            next_uid: 0,
            threads,
            paths: HashMap::from([(
                root,
                PathState { cursor: 0, on_correct: true, history: 0, resume_at: 0, buffered: 0 },
            )]),
            node_ops: HashMap::from([(root, VecDeque::new())]),
            ops: HashMap::new(),
            frontend: BTreeSet::new(),
            waiting: BTreeSet::new(),
            executing: BTreeSet::new(),
            correct_ops: HashMap::new(),
            window_count: 0,
            ready_at,
            producer: vec![None; tags],
            rename,
            next_commit: 0,
            target_commits: target,
            warm_end: None,
            last_commit_cycle: 0,
            done_at: None,
            stats,
            per_branch: BTreeMap::new(),
            active_sum: 0,
            log: None,
            cfg,
        })
    }

    /// Keeps a record of every commit for architectural checks.
    pub fn with_commit_log(mut self) -> Self {
        self.log = Some(CommitLog::default());
        self
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.done_at.is_some()
    }

    pub fn committed(&self) -> u64 {
        self.next_commit
    }

    pub fn threads(&self) -> &ThreadTable<F> {
        &self.threads
    }

    pub fn rename_file(&self) -> &RenameFile {
        &self.rename
    }

    pub fn in_flight(&self) -> usize {
        self.ops.len()
    }

    pub fn op(&self, uid: u64) -> Option<&InFlightOp> {
        self.ops.get(&uid)
    }

    fn fault(&self, reason: impl Into<String>) -> SimError {
        SimError::Fault { cycle: self.now, reason: reason.into() }
    }

    fn measuring(&self) -> bool {
        self.next_commit >= self.cfg.warmup_instructions
    }

    fn cycle_in_window(&self) -> bool {
        self.cfg.warmup_instructions == 0 || self.warm_end.is_some_and(|w| self.now > w)
    }

    /// Advances one cycle. Stages run back to front so each sees the state
    /// left by the previous cycle.
    pub fn step_cycle(&mut self) -> Result<(), SimError> {
        if self.is_done() {
            return Ok(());
        }
        self.commit()?;
        if !self.is_done() {
            self.writeback()?;
            self.issue();
            self.dispatch()?;
            self.fetch()?;
        }
        if self.cycle_in_window() {
            let active = self.threads.active_count() as u64;
            self.active_sum += active;
            self.stats.peak_active_threads = self.stats.peak_active_threads.max(active);
        }
        if self.now - self.last_commit_cycle > self.cfg.stall_limit {
            return Err(self.fault(format!("no commit for {} cycles", self.cfg.stall_limit)));
        }
        self.now += 1;
        Ok(())
    }

    // ---- commit ----

    fn commit(&mut self) -> Result<(), SimError> {
        let trace = self.trace;
        for _ in 0..self.cfg.retire_width() {
            let seq = self.next_commit;
            let Some(&uid) = self.correct_ops.get(&seq) else { break };
            if self.ops[&uid].stage != Stage::WrittenBack {
                break;
            }
            let node = self.threads.find(self.ops[&uid].node);
            let Some(entry) = self.threads.entry(node) else {
                return Err(self.fault(format!("seq {seq} belongs to a dead thread")));
            };
            if !entry.path.is_root() {
                break;
            }
            let op = self.ops.remove(&uid).expect("checked");
            for &(reg, tag) in &op.dst_tags {
                self.rename.commit_rename(reg, tag).map_err(|e| self.fault(e.to_string()))?;
            }
            if op.src_producers.iter().flatten().any(|p| !p.correct_path) {
                return Err(self.fault(format!("seq {seq} read a wrong-path value")));
            }
            let rec = &trace[seq as usize];
            self.retire_branch(rec, &op);
            self.correct_ops.remove(&seq);
            let list = self.node_ops.get_mut(&node).expect("node list");
            if list.front() == Some(&uid) {
                list.pop_front();
            } else if let Some(i) = list.iter().position(|u| *u == uid) {
                list.remove(i);
            }
            self.window_count -= 1;
            if let Some(log) = self.log.as_mut() {
                log.records.push(CommitRecord { seq, sources: op.src_producers });
            }
            if seq >= self.cfg.warmup_instructions {
                self.stats.committed_instructions += 1;
            }
            self.stats.totals.committed += 1;
            self.next_commit += 1;
            self.last_commit_cycle = self.now;
            if self.next_commit == self.cfg.warmup_instructions {
                self.warm_end = Some(self.now);
            }
            if self.next_commit == self.target_commits {
                self.done_at = Some(self.now);
                break;
            }
        }
        Ok(())
    }

    /// Trains the predictors on a committing branch and records its stats.
    fn retire_branch(&mut self, rec: &TraceRecord, op: &InFlightOp) {
        match rec.op {
            OpClass::BranchCond => {
                let b = op.branch.expect("conditional branch info");
                let correct = b.gshare_taken == rec.taken;
                self.gshare.update_at(b.gshare_index, rec.taken);
                self.confidence.update(rec.pc, correct);
                self.btb.insert(rec.pc, rec.target_pc);
                if rec.seq >= self.cfg.warmup_instructions {
                    self.stats.cond_branches += 1;
                    self.stats.cond_mispredicted += u64::from(!correct);
                    let s = self.per_branch.entry(rec.pc).or_insert(BranchStat { pc: rec.pc, ..BranchStat::default() });
                    s.executions += 1;
                    s.mispredictions += u64::from(!correct);
                    if self.cfg.policy.uses_confidence() {
                        self.stats.confusion.record(b.confidence, correct);
                    }
                }
            }
            OpClass::BranchUncond => {
                self.btb.insert(rec.pc, rec.target_pc);
            }
            _ => {}
        }
    }

    // ---- writeback and branch resolution ----

    fn writeback(&mut self) -> Result<(), SimError> {
        for _ in 0..self.cfg.writeback_width {
            let Some(&(due, uid)) = self.executing.first() else { break };
            if due > self.now {
                break;
            }
            self.executing.pop_first();
            let Some(op) = self.ops.get_mut(&uid) else {
                return Err(self.fault(format!("op {uid} executing after squash")));
            };
            op.stage = Stage::WrittenBack;
            op.wb_cycle = Some(self.now);
            for &(_, t) in &op.dst_tags {
                self.ready_at[t.index()] = self.now;
            }
            if op.is_forked_branch {
                if op.correct_path {
                    self.resolve_fork(uid)?;
                }
            } else if op.recovery.is_some() {
                self.recover(uid)?;
            }
        }
        Ok(())
    }

    fn squash(&mut self, uid: u64) -> Result<(), SimError> {
        let Some(op) = self.ops.remove(&uid) else { return Ok(()) };
        if op.correct_path {
            return Err(self.fault(format!("squashed correct-path seq {}", op.seq)));
        }
        match op.stage {
            Stage::Fetched => {
                self.frontend.remove(&uid);
                if let Some(st) = self.paths.get_mut(&op.node) {
                    st.buffered -= 1;
                }
            }
            Stage::Dispatched => {
                self.waiting.remove(&uid);
                self.window_count -= 1;
            }
            Stage::Issued => {
                self.executing.remove(&(op.wb_due, uid));
                self.window_count -= 1;
            }
            Stage::WrittenBack => self.window_count -= 1,
        }
        self.stats.totals.squashed += 1;
        Ok(())
    }

    fn kill_node(&mut self, key: ThreadKey) -> Result<(), SimError> {
        self.paths.remove(&key);
        for uid in self.node_ops.remove(&key).unwrap_or_default() {
            self.squash(uid)?;
        }
        Ok(())
    }

    /// A correct-path forked branch executed: drop the losing arm and let the
    /// winner take the parent's place.
    fn resolve_fork(&mut self, uid: u64) -> Result<(), SimError> {
        let op = &self.ops[&uid];
        let actual = self.trace[op.seq as usize].taken;
        let parent = self.threads.find(op.node);
        let parent_path = self.threads.entry(parent).map(|e| e.path).ok_or_else(|| self.fault("fork parent gone"))?;
        let res = self.threads.resolve_key(parent, actual).map_err(|e| self.fault(e.to_string()))?;
        for k in &res.invalidated_keys {
            self.kill_node(*k)?;
        }
        self.rename.resolve_fork(&parent_path, actual).map_err(|e| self.fault(e.to_string()))?;
        let mut merged = self.node_ops.remove(&parent).unwrap_or_default();
        merged.extend(self.node_ops.remove(&res.survivor).unwrap_or_default());
        self.node_ops.insert(res.survivor, merged);
        self.paths.remove(&parent);
        Ok(())
    }

    /// Flushes everything younger than the branch `uid` on its thread and
    /// restarts fetch on the recorded path after it.
    pub fn recover(&mut self, uid: u64) -> Result<(), SimError> {
        let Some(op) = self.ops.get_mut(&uid) else {
            return Err(SimError::Fault { cycle: self.now, reason: format!("recover on unknown op {uid}") });
        };
        let Some(kind) = op.recovery.take() else { return Ok(()) };
        let (seq, node, history, mark) = (op.seq, op.node, op.history, op.rename_mark);
        let rec = &self.trace[seq as usize];
        let x = self.threads.find(node);
        while let Some(&young) = self.node_ops.get(&x).and_then(|l| l.back()) {
            if young <= uid {
                break;
            }
            self.node_ops.get_mut(&x).expect("list").pop_back();
            self.squash(young)?;
        }
        let dead = self.threads.prune_descendants(x, rec.successor_pc()).map_err(|e| self.fault(e.to_string()))?;
        for k in dead {
            self.kill_node(k)?;
        }
        let path = self.threads.entry(x).expect("pruned thread").path;
        self.rename.prune(&path, mark).map_err(|e| self.fault(e.to_string()))?;
        let st = self.paths.get_mut(&x).expect("path state");
        st.cursor = seq as usize + 1;
        st.on_correct = true;
        st.history = if rec.op == OpClass::BranchCond { push_history(history, rec.taken) } else { history };
        st.resume_at = self.now + 1;
        if self.measuring() {
            match kind {
                Recovery::Cond => self.stats.recoveries += 1,
                Recovery::Uncond => self.stats.uncond_recoveries += 1,
            }
        }
        Ok(())
    }

    // ---- issue ----

    fn issue(&mut self) {
        let mut used = [0usize; UnitClass::ALL.len()];
        let mut picked = Vec::new();
        for &uid in &self.waiting {
            if picked.len() == self.cfg.issue_width {
                break;
            }
            let op = &self.ops[&uid];
            let u = op.unit.index();
            if used[u] >= self.cfg.units.get(op.unit).count {
                continue;
            }
            if op.src_tags.iter().all(|t| self.ready_at[t.index()] <= self.now) {
                used[u] += 1;
                picked.push(uid);
            }
        }
        for uid in picked {
            self.waiting.remove(&uid);
            let op = self.ops.get_mut(&uid).expect("waiting op");
            op.stage = Stage::Issued;
            op.wb_due = self.now + self.cfg.units.get(op.unit).latency + 1;
            self.executing.insert((op.wb_due, uid));
        }
    }

    // ---- dispatch ----

    fn dispatch(&mut self) -> Result<(), SimError> {
        let trace = self.trace;
        for _ in 0..self.cfg.dispatch_width() {
            let Some(&uid) = self.frontend.first() else { break };
            let op = &self.ops[&uid];
            if op.fetch_cycle + self.cfg.frontend_depth > self.now {
                break;
            }
            let rec = &trace[op.seq as usize];
            if self.window_count >= self.cfg.window_size {
                if self.measuring() {
                    self.stats.window_stalls += 1;
                }
                break;
            }
            if self.rename.free_count() < rec.dst_regs.len() {
                if self.measuring() {
                    self.stats.rename_stalls += 1;
                }
                break;
            }
            let (node, correct) = (op.node, op.correct_path);
            let rep = self.threads.find(node);
            let path =
                self.threads.entry(rep).map(|e| e.path).ok_or_else(|| self.fault("dispatch from dead thread"))?;
            let mut srcs = Vec::with_capacity(rec.src_regs.len());
            let mut producers = Vec::with_capacity(rec.src_regs.len());
            for &r in &rec.src_regs {
                let t = self.rename.lookup_src(&path, r).map_err(|e| self.fault(e.to_string()))?;
                srcs.push(t);
                producers.push(self.producer[t.index()]);
            }
            let mut dsts = Vec::with_capacity(rec.dst_regs.len());
            for &r in &rec.dst_regs {
                let t = self.rename.rename_dest(&path, r).map_err(|e| self.fault(e.to_string()))?;
                self.ready_at[t.index()] = NOT_READY;
                self.producer[t.index()] = Some(Producer { seq: rec.seq, correct_path: correct });
                dsts.push((r, t));
            }
            let mark = self.rename.next_order();
            let op = self.ops.get_mut(&uid).expect("frontend op");
            op.stage = Stage::Dispatched;
            op.src_tags = srcs;
            op.src_producers = producers;
            op.dst_tags = dsts;
            op.rename_mark = mark;
            self.frontend.remove(&uid);
            self.waiting.insert(uid);
            self.window_count += 1;
            if let Some(st) = self.paths.get_mut(&node) {
                st.buffered -= 1;
            }
        }
        Ok(())
    }

    // ---- fetch ----

    fn fetch(&mut self) -> Result<(), SimError> {
        let len = self.trace.len();
        let requests = {
            let active: Vec<_> = self
                .threads
                .active_threads()
                .into_iter()
                .filter(|e| {
                    let st = &self.paths[&e.key];
                    st.cursor < len && st.resume_at <= self.now
                })
                .collect();
            if active.is_empty() {
                return Ok(());
            }
            let cands: Vec<FetchCandidate<F>> =
                active.iter().map(|e| FetchCandidate { path: e.path, confidence: e.path_confidence }).collect();
            let alloc = allocate_fetch(&self.policy, &cands).map_err(|e| self.fault(e.to_string()))?;
            select_fetch_pcs(&alloc, &active)
        };
        let cap = self.cfg.fetch_buffer();
        for req in requests {
            let room = cap.saturating_sub(self.paths[&req.key].buffered);
            let budget = req.budget.min(room);
            if budget > 0 {
                self.fetch_path(req.key, budget)?;
            }
        }
        Ok(())
    }

    fn fetch_path(&mut self, key: ThreadKey, budget: usize) -> Result<(), SimError> {
        let trace = self.trace;
        for _ in 0..budget {
            let st = self.paths[&key];
            let Some(rec) = trace.get(st.cursor) else { break };
            let uid = self.next_uid;
            self.next_uid += 1;
            let mut op = InFlightOp {
                uid,
                seq: rec.seq,
                node: key,
                correct_path: st.on_correct,
                stage: Stage::Fetched,
                unit: UnitClass::of(rec.op),
                fetch_cycle: self.now,
                wb_cycle: None,
                dst_tags: Vec::new(),
                src_tags: Vec::new(),
                is_forked_branch: false,
                branch: None,
                src_producers: Vec::new(),
                history: st.history,
                recovery: None,
                rename_mark: 0,
                wb_due: 0,
            };
            let mut next = PathState { cursor: st.cursor + 1, ..st };
            let mut stop = false;
            let mut fork_target = None;
            match rec.op {
                OpClass::BranchUncond => {
                    if self.btb.lookup(rec.pc).is_none() {
                        self.count_btb_miss();
                        if next.on_correct {
                            op.recovery = Some(Recovery::Uncond);
                            next.on_correct = false;
                        }
                        stop = true;
                    }
                }
                OpClass::BranchCond => {
                    let gi = self.gshare.index_with(rec.pc, st.history);
                    let gt = self.gshare.predict_at(gi);
                    let conf = self.confidence.get(rec.pc);
                    op.branch = Some(BranchInfo { gshare_index: gi, gshare_taken: gt, confidence: conf.classify() });
                    if self.cfg.policy == PolicyKind::PerfectSingle {
                        let dir = oracle_predict(self.oracle, rec.seq).map_err(|e| self.fault(e.to_string()))?.taken;
                        next.history = push_history(st.history, dir);
                    } else {
                        match self.btb.lookup(rec.pc) {
                            None => {
                                self.count_btb_miss();
                                if next.on_correct && rec.taken {
                                    op.recovery = Some(Recovery::Cond);
                                    next.on_correct = false;
                                }
                                next.history = push_history(st.history, false);
                                stop = true;
                            }
                            Some(target) => {
                                let entry = self.threads.entry(key).expect("fetching thread");
                                if should_fork(&self.policy, entry) == ForkDecision::Fork {
                                    op.is_forked_branch = true;
                                    fork_target = Some((target, self.arm_probability(gt, conf)));
                                    stop = true;
                                } else {
                                    if next.on_correct && gt != rec.taken {
                                        op.recovery = Some(Recovery::Cond);
                                        next.on_correct = false;
                                    }
                                    next.history = push_history(st.history, gt);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
            if op.correct_path {
                self.correct_ops.insert(rec.seq, uid);
            }
            self.ops.insert(uid, op);
            self.frontend.insert(uid);
            self.node_ops.get_mut(&key).expect("node list").push_back(uid);
            next.buffered += 1;
            self.paths.insert(key, next);
            self.stats.totals.fetched += 1;
            if let Some((target, taken_prob)) = fork_target {
                self.fork(key, rec, target, taken_prob, st)?;
            }
            if stop {
                break;
            }
        }
        Ok(())
    }

    fn count_btb_miss(&mut self) {
        if self.measuring() {
            self.stats.btb_misses += 1;
        }
    }

    /// Probability given to the taken arm of a fork.
    fn arm_probability(&self, gshare_taken: bool, conf: ConfidenceCounter) -> F {
        if self.cfg.policy == PolicyKind::DividedEager {
            return F::from(0.5).unwrap();
        }
        // Keep both arms strictly positive so every path stays schedulable.
        let cap = F::one() - F::from(2f64.powi(-10)).unwrap();
        let p = conf.probability::<F>().min(cap);
        if gshare_taken {
            p
        } else {
            F::one() - p
        }
    }

    fn fork(
        &mut self,
        key: ThreadKey,
        rec: &TraceRecord,
        target: u64,
        taken_prob: F,
        parent: PathState,
    ) -> Result<(), SimError> {
        let path = self.threads.entry(key).expect("fetching thread").path;
        let (t, n) = self
            .threads
            .fork_key(key, rec.pc, target, rec.fallthrough_pc, taken_prob)
            .map_err(|e| self.fault(e.to_string()))?;
        self.rename.fork(&path).map_err(|e| self.fault(e.to_string()))?;
        for (child, arm) in [(t, true), (n, false)] {
            self.paths.insert(
                child,
                PathState {
                    cursor: rec.seq as usize + 1,
                    on_correct: parent.on_correct && arm == rec.taken,
                    history: push_history(parent.history, arm),
                    resume_at: self.now + 1,
                    buffered: 0,
                },
            );
            self.node_ops.insert(child, VecDeque::new());
        }
        if self.measuring() {
            self.stats.forks += 1;
        }
        Ok(())
    }

    // ---- run control ----

    /// Runs to the end of the measurement window.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while !self.is_done() {
            self.step_cycle()?;
        }
        Ok(())
    }

    /// Structural consistency of the whole machine.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.threads.check_invariants()?;
        self.rename.check_invariants()?;
        let dispatched = self.ops.values().filter(|o| o.stage != Stage::Fetched).count();
        if dispatched != self.window_count {
            return Err(format!("window holds {} ops, counter says {}", dispatched, self.window_count));
        }
        if self.window_count > self.cfg.window_size {
            return Err("window overflow".into());
        }
        let t = &self.stats.totals;
        if t.fetched != t.committed + t.squashed + self.ops.len() as u64 {
            return Err(format!(
                "fetched {} != committed {} + squashed {} + in flight {}",
                t.fetched,
                t.committed,
                t.squashed,
                self.ops.len()
            ));
        }
        let levels = self.cfg.max_branch_levels.min(63) as u32;
        if self.threads.active_count() as u128 > 1u128 << levels {
            return Err("more active threads than the level cap allows".into());
        }
        Ok(())
    }

    /// Final statistics. Valid once [`Machine::is_done`].
    pub fn finish(self) -> Result<(RunStats, Option<CommitLog>), SimError> {
        let Some(end) = self.done_at else {
            return Err(self.fault("finish before the measurement window closed"));
        };
        let start = match self.warm_end {
            Some(w) if self.cfg.warmup_instructions > 0 => w + 1,
            _ => 0,
        };
        let cycles = end + 1 - start;
        let mut s = self.stats;
        s.cycles = cycles;
        s.mean_active_threads = self.active_sum as f64 / cycles as f64;
        s.per_branch = self.per_branch.into_values().collect();
        s.rename_allocations = self.rename.allocations();
        s.totals.in_flight = self.ops.len() as u64;
        let log = self.log.map(|mut log| {
            log.final_map = self.rename.committed_map().iter().map(|t| self.producer[t.index()]).collect();
            log
        });
        Ok((s, log))
    }
}

/// Simulates `trace` under `cfg`.
pub fn run(trace: &[TraceRecord], oracle: &BranchOracle, cfg: &MachineConfig) -> Result<RunStats, SimError> {
    let mut m: Machine<'_, f64> = Machine::new(trace, oracle, cfg.clone())?;
    m.run_to_end()?;
    Ok(m.finish()?.0)
}

/// Like [`run`], also returning the commit log.
pub fn run_with_log(
    trace: &[TraceRecord],
    oracle: &BranchOracle,
    cfg: &MachineConfig,
) -> Result<(RunStats, CommitLog), SimError> {
    let mut m: Machine<'_, f64> = Machine::new(trace, oracle, cfg.clone())?.with_commit_log();
    m.run_to_end()?;
    let (s, log) = m.finish()?;
    Ok((s, log.expect("log enabled")))
}
