//! Multi-path register renaming.
//!
//! Each live path keeps its own log of destination renames. A source read
//! walks the reader's own log, then the logs of its ancestors from nearest to
//! farthest, then the committed map. A parent stops renaming once it forks, so
//! every event in an ancestor's log precedes the fork leading to the reader.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::thread_manager::PathId;
use crate::trace_model::{ArchReg, NUM_ARCH_REGS};

/// Default size of the speculative tag pool.
pub const DEFAULT_PHYS_TAGS: usize = 8192;

/// One physical value instance. Tags `0..32` hold the initial architectural
/// state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RenameTag(pub u32);

impl RenameTag {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenameEvent {
    pub arch_reg: ArchReg,
    pub tag: RenameTag,
    pub path: PathId,
    /// Thread level of the writer when the rename happened.
    pub level: usize,
    /// Strictly increasing within a path log.
    pub order: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenameError {
    #[error("rename tag pool exhausted")]
    PoolExhausted,
    #[error("no live rename log for path {0}")]
    UnknownPath(PathId),
    #[error("path {0} already has a rename log")]
    PathExists(PathId),
    #[error("register r{0} out of range")]
    BadRegister(ArchReg),
    #[error("r{reg}/{tag:?} is not the oldest uncommitted rename on the root path")]
    NotCommittable { reg: ArchReg, tag: RenameTag },
}

#[derive(Clone, Debug)]
struct PathLog {
    events: VecDeque<RenameEvent>,
    /// Newest (order, tag) per register in this log.
    latest: [Option<(u64, RenameTag)>; NUM_ARCH_REGS],
}

impl PathLog {
    fn new() -> Self {
        PathLog { events: VecDeque::new(), latest: [None; NUM_ARCH_REGS] }
    }

    fn rebuild_latest(&mut self) {
        self.latest = [None; NUM_ARCH_REGS];
        for e in &self.events {
            self.latest[e.arch_reg as usize] = Some((e.order, e.tag));
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenameFile {
    logs: BTreeMap<PathId, PathLog>,
    committed: [RenameTag; NUM_ARCH_REGS],
    free: Vec<RenameTag>,
    total_tags: usize,
    next_order: u64,
    allocations: u64,
}

impl RenameFile {
    /// A file with the 32 architectural tags committed and `phys_tags` free
    /// tags for speculative renames.
    pub fn new(phys_tags: usize) -> Self {
        let total = NUM_ARCH_REGS + phys_tags;
        let committed = std::array::from_fn(|r| RenameTag(r as u32));
        // Reversed so allocation hands out the lowest tag first.
        let free = (NUM_ARCH_REGS..total).rev().map(|t| RenameTag(t as u32)).collect();
        RenameFile {
            logs: BTreeMap::from([(PathId::root(), PathLog::new())]),
            committed,
            free,
            total_tags: total,
            next_order: 0,
            allocations: 0,
        }
    }

    pub fn total_tags(&self) -> usize {
        self.total_tags
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn allocations(&self) -> u64 {
        self.allocations
    }

    pub fn committed_map(&self) -> &[RenameTag; NUM_ARCH_REGS] {
        &self.committed
    }

    pub fn has_path(&self, path: &PathId) -> bool {
        self.logs.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathId> {
        self.logs.keys()
    }

    pub fn events(&self, path: &PathId) -> impl Iterator<Item = &RenameEvent> {
        self.logs.get(path).into_iter().flat_map(|l| l.events.iter())
    }

    /// Order number the next rename will receive. Events with an order at or
    /// above this mark can later be dropped with [`RenameFile::prune`].
    pub fn next_order(&self) -> u64 {
        self.next_order
    }

    pub fn rename_dest(&mut self, path: &PathId, arch_reg: ArchReg) -> Result<RenameTag, RenameError> {
        if arch_reg as usize >= NUM_ARCH_REGS {
            return Err(RenameError::BadRegister(arch_reg));
        }
        let log = self.logs.get_mut(path).ok_or(RenameError::UnknownPath(*path))?;
        let tag = self.free.pop().ok_or(RenameError::PoolExhausted)?;
        let order = self.next_order;
        self.next_order += 1;
        self.allocations += 1;
        log.events.push_back(RenameEvent { arch_reg, tag, path: *path, level: path.len(), order });
        log.latest[arch_reg as usize] = Some((order, tag));
        Ok(tag)
    }

    pub fn lookup_src(&self, path: &PathId, arch_reg: ArchReg) -> Result<RenameTag, RenameError> {
        if arch_reg as usize >= NUM_ARCH_REGS {
            return Err(RenameError::BadRegister(arch_reg));
        }
        if !self.logs.contains_key(path) {
            return Err(RenameError::UnknownPath(*path));
        }
        for n in (0..=path.len()).rev() {
            let hit = self.logs.get(&path.prefix(n)).and_then(|l| l.latest[arch_reg as usize]);
            if let Some((_, tag)) = hit {
                return Ok(tag);
            }
        }
        Ok(self.committed[arch_reg as usize])
    }

    /// Opens empty logs for both children of `parent`.
    pub fn fork(&mut self, parent: &PathId) -> Result<(), RenameError> {
        if !self.logs.contains_key(parent) {
            return Err(RenameError::UnknownPath(*parent));
        }
        for taken in [true, false] {
            let child = parent.child(taken);
            if self.logs.contains_key(&child) {
                return Err(RenameError::PathExists(child));
            }
        }
        for taken in [true, false] {
            self.logs.insert(parent.child(taken), PathLog::new());
        }
        Ok(())
    }

    /// Drops the logs of `paths` and frees their tags. Unknown paths are
    /// ignored.
    pub fn release_path_renames(&mut self, paths: &[PathId]) -> usize {
        let mut freed = 0;
        for p in paths {
            if let Some(log) = self.logs.remove(p) {
                freed += log.events.len();
                self.free.extend(log.events.iter().rev().map(|e| e.tag));
            }
        }
        freed
    }

    fn subtree_of(&self, path: &PathId) -> Vec<PathId> {
        self.logs.keys().filter(|p| path.is_prefix_of(p)).copied().collect()
    }

    fn strict_descendants(&self, path: &PathId) -> Vec<PathId> {
        self.logs.keys().filter(|p| p.len() > path.len() && path.is_prefix_of(p)).copied().collect()
    }

    /// Resolves the fork below `parent`. The losing subtree is released, the
    /// winner's log is appended to the parent's, and the winner's descendants
    /// are relabeled to drop the resolved bit. Returns the number of tags
    /// freed.
    pub fn resolve_fork(&mut self, parent: &PathId, actual_taken: bool) -> Result<usize, RenameError> {
        let win = parent.child(actual_taken);
        if !self.logs.contains_key(parent) {
            return Err(RenameError::UnknownPath(*parent));
        }
        if !self.logs.contains_key(&win) {
            return Err(RenameError::UnknownPath(win));
        }
        let losers = self.subtree_of(&parent.child(!actual_taken));
        let freed = self.release_path_renames(&losers);

        let level = parent.len();
        let moved: Vec<(PathId, PathLog)> =
            self.subtree_of(&win).into_iter().map(|p| (p, self.logs.remove(&p).expect("listed"))).collect();
        for (old, mut log) in moved {
            let new = old.remove_bit(level);
            for e in log.events.iter_mut() {
                e.path = new;
                e.level = e.level.min(new.len());
            }
            if new == *parent {
                let dst = self.logs.get_mut(parent).expect("checked");
                for (r, l) in log.latest.iter().enumerate() {
                    if l.is_some() {
                        dst.latest[r] = *l;
                    }
                }
                dst.events.extend(log.events);
            } else {
                self.logs.insert(new, log);
            }
        }
        Ok(freed)
    }

    /// Recovery on `path`: releases every descendant log and drops the
    /// path's own events with order at or above `from_order`. Returns the
    /// number of tags freed.
    pub fn prune(&mut self, path: &PathId, from_order: u64) -> Result<usize, RenameError> {
        if !self.logs.contains_key(path) {
            return Err(RenameError::UnknownPath(*path));
        }
        let desc = self.strict_descendants(path);
        let mut freed = self.release_path_renames(&desc);
        let log = self.logs.get_mut(path).expect("checked");
        let mut dropped = false;
        while log.events.back().is_some_and(|e| e.order >= from_order) {
            let e = log.events.pop_back().expect("non-empty");
            self.free.push(e.tag);
            freed += 1;
            dropped = true;
        }
        if dropped {
            log.rebuild_latest();
        }
        Ok(freed)
    }

    /// Retires the oldest rename on the root path, which must write
    /// `arch_reg` with `tag`. Frees the tag it replaces in the committed map.
    pub fn commit_rename(&mut self, arch_reg: ArchReg, tag: RenameTag) -> Result<(), RenameError> {
        let log = self.logs.get_mut(&PathId::root()).expect("root log");
        match log.events.front() {
            Some(e) if e.arch_reg == arch_reg && e.tag == tag => {}
            _ => return Err(RenameError::NotCommittable { reg: arch_reg, tag }),
        }
        let e = log.events.pop_front().expect("checked");
        if log.latest[arch_reg as usize].is_some_and(|(o, _)| o == e.order) {
            log.latest[arch_reg as usize] = None;
        }
        let old = std::mem::replace(&mut self.committed[arch_reg as usize], tag);
        self.free.push(old);
        Ok(())
    }

    /// Every tag is exactly one of free, committed, or logged.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = vec![false; self.total_tags];
        let mut mark = |t: RenameTag, what: &str| -> Result<(), String> {
            let slot = seen.get_mut(t.index()).ok_or_else(|| format!("{what} tag {t:?} out of range"))?;
            if std::mem::replace(slot, true) {
                return Err(format!("{what} tag {t:?} is held twice"));
            }
            Ok(())
        };
        for t in &self.free {
            mark(*t, "free")?;
        }
        for t in &self.committed {
            mark(*t, "committed")?;
        }
        for (p, log) in &self.logs {
            let mut last = None;
            for e in &log.events {
                mark(e.tag, "logged")?;
                if e.path != *p {
                    return Err(format!("event for {} filed under {p}", e.path));
                }
                if last.is_some_and(|o| o >= e.order) {
                    return Err(format!("orders not increasing on {p}"));
                }
                last = Some(e.order);
            }
        }
        match seen.iter().position(|s| !s) {
            Some(t) => Err(format!("tag {t} leaked")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn p(s: &str) -> PathId {
        PathId::parse(s).unwrap()
    }

    #[test]
    fn root_rename_visible_to_grandchildren() {
        let mut f = RenameFile::new(64);
        let t = f.rename_dest(&p("root"), 12).unwrap();
        f.fork(&p("root")).unwrap();
        f.fork(&p("1")).unwrap();
        f.fork(&p("0")).unwrap();
        assert_eq!(f.lookup_src(&p("10"), 12).unwrap(), t);
        assert_eq!(f.lookup_src(&p("01"), 12).unwrap(), t);
        assert_eq!(f.committed_map()[12], RenameTag(12));
    }

    #[test]
    fn own_rename_wins() {
        let mut f = RenameFile::new(64);
        f.rename_dest(&p("root"), 12).unwrap();
        f.fork(&p("root")).unwrap();
        let a = f.rename_dest(&p("0"), 12).unwrap();
        let b = f.rename_dest(&p("0"), 12).unwrap();
        assert_ne!(a, b);
        assert_eq!(f.lookup_src(&p("0"), 12).unwrap(), b);
        let orders: Vec<u64> = f.events(&p("0")).map(|e| e.order).collect();
        assert!(orders[0] < orders[1]);
    }

    #[test]
    fn sibling_renames_are_invisible() {
        let mut f = RenameFile::new(64);
        f.fork(&p("root")).unwrap();
        let t = f.rename_dest(&p("1"), 12).unwrap();
        f.fork(&p("1")).unwrap();
        assert_eq!(f.lookup_src(&p("10"), 12).unwrap(), t);
        assert_eq!(f.lookup_src(&p("0"), 12).unwrap(), RenameTag(12));
    }

    #[test]
    fn unknown_path_rejected() {
        let mut f = RenameFile::new(64);
        f.fork(&p("root")).unwrap();
        f.release_path_renames(&[p("0")]);
        assert_eq!(f.rename_dest(&p("0"), 3), Err(RenameError::UnknownPath(p("0"))));
        assert_eq!(f.rename_dest(&p("root"), 40), Err(RenameError::BadRegister(40)));
    }

    #[test]
    fn release_frees_tags_and_spares_sibling() {
        let mut f = RenameFile::new(64);
        f.fork(&p("root")).unwrap();
        for r in [1, 2, 3] {
            f.rename_dest(&p("0"), r).unwrap();
        }
        let s = f.rename_dest(&p("1"), 2).unwrap();
        let before = f.free_count();
        assert_eq!(f.release_path_renames(&[p("0")]), 3);
        assert_eq!(f.free_count(), before + 3);
        assert_eq!(f.lookup_src(&p("1"), 2).unwrap(), s);
        assert_eq!(f.release_path_renames(&[p("0")]), 0);
        f.check_invariants().unwrap();
    }

    #[test]
    fn commit_updates_map_and_frees_old() {
        let mut f = RenameFile::new(64);
        let a = f.rename_dest(&p("root"), 5).unwrap();
        let b = f.rename_dest(&p("root"), 5).unwrap();
        let free = f.free_count();
        f.commit_rename(5, a).unwrap();
        assert_eq!(f.committed_map()[5], a);
        f.commit_rename(5, b).unwrap();
        assert_eq!(f.committed_map()[5], b);
        assert_eq!(f.free_count(), free + 2);
        f.check_invariants().unwrap();
    }

    #[test]
    fn commit_from_speculative_path_rejected() {
        let mut f = RenameFile::new(64);
        f.fork(&p("root")).unwrap();
        let t = f.rename_dest(&p("1"), 5).unwrap();
        assert_eq!(f.commit_rename(5, t), Err(RenameError::NotCommittable { reg: 5, tag: t }));
    }

    #[test]
    fn pool_exhaustion_is_a_stall_signal() {
        let mut f = RenameFile::new(2);
        f.rename_dest(&p("root"), 1).unwrap();
        f.rename_dest(&p("root"), 1).unwrap();
        assert_eq!(f.rename_dest(&p("root"), 1), Err(RenameError::PoolExhausted));
    }

    #[test]
    fn resolve_merges_winner_into_parent() {
        let mut f = RenameFile::new(64);
        let r = f.rename_dest(&p("root"), 1).unwrap();
        f.fork(&p("root")).unwrap();
        let w = f.rename_dest(&p("1"), 2).unwrap();
        f.rename_dest(&p("0"), 2).unwrap();
        f.fork(&p("1")).unwrap();
        let g = f.rename_dest(&p("10"), 3).unwrap();
        assert_eq!(f.resolve_fork(&p("root"), true).unwrap(), 1);
        assert!(f.has_path(&p("0")) && f.has_path(&p("1")));
        assert_eq!(f.lookup_src(&p("root"), 1).unwrap(), r);
        assert_eq!(f.lookup_src(&p("root"), 2).unwrap(), w);
        assert_eq!(f.lookup_src(&p("0"), 3).unwrap(), g);
        f.commit_rename(1, r).unwrap();
        f.commit_rename(2, w).unwrap();
        f.check_invariants().unwrap();
    }

    #[test]
    fn prune_truncates_and_drops_children() {
        let mut f = RenameFile::new(64);
        let a = f.rename_dest(&p("root"), 4).unwrap();
        let mark = f.next_order();
        f.rename_dest(&p("root"), 4).unwrap();
        f.fork(&p("root")).unwrap();
        f.rename_dest(&p("1"), 4).unwrap();
        assert_eq!(f.prune(&p("root"), mark).unwrap(), 2);
        assert_eq!(f.paths().count(), 1);
        assert_eq!(f.lookup_src(&p("root"), 4).unwrap(), a);
        f.check_invariants().unwrap();
    }

    /// Reference model: each live path holds its whole ancestor write
    /// sequence, and a read scans it backward.
    #[derive(Default)]
    struct Linearized {
        seqs: HashMap<PathId, Vec<(ArchReg, RenameTag, u64)>>,
    }

    impl Linearized {
        fn lookup(&self, path: &PathId, reg: ArchReg) -> RenameTag {
            self.seqs[path].iter().rev().find(|(r, _, _)| *r == reg).map_or(RenameTag(reg as u32), |(_, t, _)| *t)
        }
    }

    #[derive(Clone, Debug)]
    enum Step {
        Write(usize, ArchReg),
        Fork(usize),
        Resolve(usize, bool),
        Prune(usize, usize),
        Commit,
        Read(usize, ArchReg),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            4 => (any::<usize>(), 0u8..32).prop_map(|(i, r)| Step::Write(i, r)),
            1 => any::<usize>().prop_map(Step::Fork),
            1 => (any::<usize>(), any::<bool>()).prop_map(|(i, t)| Step::Resolve(i, t)),
            1 => (any::<usize>(), any::<usize>()).prop_map(|(i, k)| Step::Prune(i, k)),
            1 => Just(Step::Commit),
            4 => (any::<usize>(), 0u8..32).prop_map(|(i, r)| Step::Read(i, r)),
        ]
    }

    fn leaves(f: &RenameFile) -> Vec<PathId> {
        f.paths().filter(|p| !f.has_path(&p.child(true))).copied().collect()
    }

    proptest! {
        #[test]
        fn matches_linearized_oracle(steps in prop::collection::vec(step(), 1..300)) {
            let mut f = RenameFile::new(4096);
            let mut o = Linearized::default();
            o.seqs.insert(PathId::root(), Vec::new());
            for s in steps {
                let ls = leaves(&f);
                match s {
                    Step::Write(i, r) => {
                        let path = ls[i % ls.len()];
                        let order = f.next_order();
                        let t = f.rename_dest(&path, r).unwrap();
                        o.seqs.get_mut(&path).unwrap().push((r, t, order));
                    }
                    Step::Fork(i) => {
                        let path = ls[i % ls.len()];
                        if path.len() < 4 {
                            f.fork(&path).unwrap();
                            let base = o.seqs[&path].clone();
                            o.seqs.insert(path.child(true), base.clone());
                            o.seqs.insert(path.child(false), base);
                        }
                    }
                    Step::Resolve(i, taken) => {
                        let forked: Vec<PathId> =
                            f.paths().filter(|p| f.has_path(&p.child(true))).copied().collect();
                        if !forked.is_empty() {
                            let parent = forked[i % forked.len()];
                            f.resolve_fork(&parent, taken).unwrap();
                            let lvl = parent.len();
                            let old = std::mem::take(&mut o.seqs);
                            for (path, seq) in old {
                                if parent.child(!taken).is_prefix_of(&path) {
                                    continue;
                                }
                                if parent.child(taken).is_prefix_of(&path) {
                                    o.seqs.insert(path.remove_bit(lvl), seq);
                                } else if path != parent {
                                    o.seqs.insert(path, seq);
                                }
                            }
                        }
                    }
                    Step::Prune(i, k) => {
                        let all: Vec<PathId> = f.paths().copied().collect();
                        let path = all[i % all.len()];
                        let own: Vec<u64> = f.events(&path).map(|e| e.order).collect();
                        let mark = if own.is_empty() { f.next_order() } else { own[k % own.len()] };
                        f.prune(&path, mark).unwrap();
                        o.seqs.retain(|q, _| !(q.len() > path.len() && path.is_prefix_of(q)));
                        o.seqs.get_mut(&path).unwrap().retain(|(_, _, ord)| *ord < mark);
                    }
                    Step::Commit => {
                        let front = f.events(&PathId::root()).next().copied();
                        if let Some(e) = front {
                            f.commit_rename(e.arch_reg, e.tag).unwrap();
                        }
                    }
                    Step::Read(i, r) => {
                        let all: Vec<PathId> = f.paths().copied().collect();
                        let path = all[i % all.len()];
                        prop_assert_eq!(f.lookup_src(&path, r).unwrap(), o.lookup(&path, r));
                    }
                }
                if let Err(e) = f.check_invariants() {
                    return Err(TestCaseError::fail(e));
                }
            }
            for path in f.paths() {
                for r in 0..32 {
                    prop_assert_eq!(f.lookup_src(path, r).unwrap(), o.lookup(path, r));
                }
            }
        }

        #[test]
        fn single_path_is_a_plain_rename_map(writes in prop::collection::vec((0u8..32, any::<bool>()), 1..500)) {
            let mut f = RenameFile::new(1024);
            let mut map: HashMap<ArchReg, RenameTag> = HashMap::new();
            for (r, commit) in writes {
                let t = f.rename_dest(&PathId::root(), r).unwrap();
                map.insert(r, t);
                if commit {
                    let e = *f.events(&PathId::root()).next().unwrap();
                    f.commit_rename(e.arch_reg, e.tag).unwrap();
                }
                for q in 0..32u8 {
                    let want = map.get(&q).copied().unwrap_or(RenameTag(q as u32));
                    prop_assert_eq!(f.lookup_src(&PathId::root(), q).unwrap(), want);
                }
            }
            f.check_invariants().unwrap();
        }
    }
}
