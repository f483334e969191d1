//! Thread Management Table for speculative thread paths.
//!
//! Every fetch stream is a node of a binary fork tree. A node that reaches a
//! conditional branch it may fork on stops fetching and hands its stream to
//! two children: the taken arm (id bit `1`) and the not-taken arm (bit `0`).
//! A node's [`PathId`] spells the directions of the *unresolved* forks from
//! the root down to it, earliest first, so its length is the node's branch
//! level.
//!
//! When a fork resolves, the losing arm and all of its descendants are
//! invalidated. The winning child then takes the parent's place: the parent
//! is marked merged, the resolved bit is dropped from every id in the
//! winner's subtree, and their confidences are renormalized by the winning
//! arm's probability. Thread keys stay stable across all of this; ids do not.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_traits::Float;
use thiserror::Error;

/// Default cap on unresolved forks along one path.
pub const DEFAULT_MAX_BRANCH_LEVELS: usize = 25;

/// Branch-history thread identifier. Bit `i` is the direction taken at the
/// `i`-th unresolved fork below the root.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PathId {
    // Bit `len - 1 - i` holds direction `i`, so equal-length ids compare
    // numerically in lexicographic order.
    bits: u64,
    len: u8,
}

impl PathId {
    pub const MAX_LEN: usize = 63;

    pub fn root() -> Self {
        PathId::default()
    }

    /// Builds an id from directions, earliest fork first.
    pub fn from_bits(bits: &[bool]) -> Self {
        assert!(bits.len() <= Self::MAX_LEN, "path longer than {} levels", Self::MAX_LEN);
        bits.iter().fold(PathId::root(), |p, &b| p.child(b))
    }

    /// Parses strings like `"101"`. `""` and `"root"` are the root.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "root" {
            return Some(PathId::root());
        }
        let bits: Option<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        bits.filter(|b| b.len() <= Self::MAX_LEN).map(|b| PathId::from_bits(&b))
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit {i} of a {}-level path", self.len);
        (self.bits >> (self.len() - 1 - i)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(|i| self.bit(i))
    }

    pub fn child(&self, taken: bool) -> Self {
        assert!(self.len() < Self::MAX_LEN, "path id overflow");
        PathId { bits: (self.bits << 1) | u64::from(taken), len: self.len + 1 }
    }

    pub fn parent(&self) -> Option<Self> {
        (!self.is_root()).then(|| self.prefix(self.len() - 1))
    }

    /// The first `n` directions.
    pub fn prefix(&self, n: usize) -> Self {
        assert!(n <= self.len());
        PathId { bits: self.bits >> (self.len() - n), len: n as u8 }
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &PathId) -> bool {
        self.len <= other.len && other.prefix(self.len()) == *self
    }

    /// Drops the direction at index `at`.
    pub fn remove_bit(&self, at: usize) -> Self {
        assert!(at < self.len());
        let low_n = self.len() - 1 - at;
        let low = self.bits & ((1u64 << low_n) - 1);
        let high = self.bits >> (low_n + 1);
        PathId { bits: (high << low_n) | low, len: self.len - 1 }
    }
}

impl PartialOrd for PathId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Level first, then lexicographic.
impl Ord for PathId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.len, self.bits).cmp(&(other.len, other.bits))
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return f.write_str("root");
        }
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PathId({self})")
    }
}

/// True iff `a` is a proper prefix of `b`.
pub fn is_ancestor(a: &PathId, b: &PathId) -> bool {
    a.len < b.len && a.is_prefix_of(b)
}

/// Stable handle to a table entry. Survives relabeling and merges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadKey(u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThreadStatus {
    /// A leaf that may fetch.
    Active,
    /// Forked and waiting on the resolution of its branch.
    Forked,
    Invalidated,
    /// Replaced by its winning child after its fork resolved.
    Merged,
}

/// One fork awaiting resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForkRecord<F> {
    pub branch_pc: u64,
    pub taken_child: ThreadKey,
    pub not_taken_child: ThreadKey,
    pub taken_prob: F,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreadEntry<F> {
    pub key: ThreadKey,
    pub path: PathId,
    pub next_pc: u64,
    /// The branch that created this path. `None` for the original root.
    pub forked_branch_addr: Option<u64>,
    pub path_confidence: F,
    pub status: ThreadStatus,
    parent: Option<ThreadKey>,
    fork: Option<ForkRecord<F>>,
    merged_into: Option<ThreadKey>,
}

impl<F: Copy> ThreadEntry<F> {
    pub fn thread_level(&self) -> usize {
        self.path.len()
    }

    pub fn fork_record(&self) -> Option<&ForkRecord<F>> {
        self.fork.as_ref()
    }

    pub fn parent_key(&self) -> Option<ThreadKey> {
        self.parent
    }
}

/// Identifies a fork by its branch and where it happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForkPoint {
    pub branch_pc: u64,
    pub level: usize,
    pub parent: PathId,
}

/// Outcome of resolving a fork.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    /// Ids of the losing subtree, as they were before resolution.
    pub invalidated: Vec<PathId>,
    pub invalidated_keys: Vec<ThreadKey>,
    /// The winning child, now carrying the parent's id.
    pub survivor: ThreadKey,
    /// The parent, now merged into `survivor`.
    pub merged: ThreadKey,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ThreadError {
    #[error("no live thread with path {0}")]
    UnknownPath(PathId),
    #[error("no thread with key {0:?}")]
    UnknownKey(ThreadKey),
    #[error("thread {path} is {status:?}, expected {expected:?}")]
    WrongStatus { path: PathId, status: ThreadStatus, expected: ThreadStatus },
    #[error("fork at level {level} exceeds the {max}-level limit")]
    LevelExceeded { level: usize, max: usize },
    #[error("arm probability must lie strictly between 0 and 1")]
    InvalidProbability,
    #[error("no pending fork at {0:?}")]
    UnknownFork(ForkPoint),
}

/// The Thread Management Table.
#[derive(Clone, Debug)]
pub struct ThreadTable<F = f64> {
    entries: HashMap<ThreadKey, ThreadEntry<F>>,
    /// Active and forked entries by current id.
    live: BTreeMap<PathId, ThreadKey>,
    max_levels: usize,
    next_key: u64,
    root: ThreadKey,
}

impl<F: Float> ThreadTable<F> {
    pub fn new(max_branch_levels: usize, start_pc: u64) -> Self {
        assert!(max_branch_levels <= PathId::MAX_LEN, "at most {} branch levels", PathId::MAX_LEN);
        let key = ThreadKey(0);
        let root = ThreadEntry {
            key,
            path: PathId::root(),
            next_pc: start_pc,
            forked_branch_addr: None,
            path_confidence: F::one(),
            status: ThreadStatus::Active,
            parent: None,
            fork: None,
            merged_into: None,
        };
        ThreadTable {
            entries: HashMap::from([(key, root)]),
            live: BTreeMap::from([(PathId::root(), key)]),
            max_levels: max_branch_levels,
            next_key: 1,
            root: key,
        }
    }

    pub fn max_branch_levels(&self) -> usize {
        self.max_levels
    }

    /// The node currently at level 0.
    pub fn root_key(&self) -> ThreadKey {
        self.root
    }

    pub fn entry(&self, key: ThreadKey) -> Option<&ThreadEntry<F>> {
        self.entries.get(&key)
    }

    pub fn entry_mut(&mut self, key: ThreadKey) -> Option<&mut ThreadEntry<F>> {
        self.entries.get_mut(&key)
    }

    pub fn key_of(&self, path: &PathId) -> Option<ThreadKey> {
        self.live.get(path).copied()
    }

    pub fn get(&self, path: &PathId) -> Option<&ThreadEntry<F>> {
        self.key_of(path).and_then(|k| self.entries.get(&k))
    }

    fn live_entry(&self, key: ThreadKey) -> Result<&ThreadEntry<F>, ThreadError> {
        self.entries.get(&key).ok_or(ThreadError::UnknownKey(key))
    }

    /// Follows merges to the node that now stands for `key`.
    pub fn find(&mut self, key: ThreadKey) -> ThreadKey {
        let mut cur = key;
        while let Some(next) = self.entries.get(&cur).and_then(|e| e.merged_into) {
            cur = next;
        }
        let mut k = key;
        while k != cur {
            let e = self.entries.get_mut(&k).expect("merge chain entry");
            let next = e.merged_into.expect("merge chain link");
            e.merged_into = Some(cur);
            k = next;
        }
        cur
    }

    /// Active leaves, ordered by level and then id.
    pub fn active_threads(&self) -> Vec<&ThreadEntry<F>> {
        self.live.values().map(|k| &self.entries[k]).filter(|e| e.status == ThreadStatus::Active).collect()
    }

    pub fn active_count(&self) -> usize {
        self.live.values().filter(|k| self.entries[k].status == ThreadStatus::Active).count()
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn path_confidence(&self, path: &PathId) -> Result<F, ThreadError> {
        self.get(path).map(|e| e.path_confidence).ok_or(ThreadError::UnknownPath(*path))
    }

    pub fn fork(
        &mut self,
        parent: &PathId,
        branch_pc: u64,
        taken_target: u64,
        fallthrough_pc: u64,
        taken_conf: F,
    ) -> Result<(PathId, PathId), ThreadError> {
        let key = self.key_of(parent).ok_or(ThreadError::UnknownPath(*parent))?;
        let (t, n) = self.fork_key(key, branch_pc, taken_target, fallthrough_pc, taken_conf)?;
        Ok((self.entries[&t].path, self.entries[&n].path))
    }

    /// Splits an active leaf into taken and not-taken children. The parent
    /// stops fetching.
    pub fn fork_key(
        &mut self,
        parent: ThreadKey,
        branch_pc: u64,
        taken_target: u64,
        fallthrough_pc: u64,
        taken_conf: F,
    ) -> Result<(ThreadKey, ThreadKey), ThreadError> {
        if !(taken_conf > F::zero() && taken_conf < F::one()) {
            return Err(ThreadError::InvalidProbability);
        }
        let p = self.live_entry(parent)?;
        if p.status != ThreadStatus::Active {
            return Err(ThreadError::WrongStatus { path: p.path, status: p.status, expected: ThreadStatus::Active });
        }
        if p.thread_level() >= self.max_levels {
            return Err(ThreadError::LevelExceeded { level: p.thread_level(), max: self.max_levels });
        }
        let (path, conf) = (p.path, p.path_confidence);
        let make = |table: &mut Self, taken: bool| {
            let key = ThreadKey(table.next_key);
            table.next_key += 1;
            let arm = if taken { taken_conf } else { F::one() - taken_conf };
            let e = ThreadEntry {
                key,
                path: path.child(taken),
                next_pc: if taken { taken_target } else { fallthrough_pc },
                forked_branch_addr: Some(branch_pc),
                path_confidence: conf * arm,
                status: ThreadStatus::Active,
                parent: Some(parent),
                fork: None,
                merged_into: None,
            };
            table.live.insert(e.path, key);
            table.entries.insert(key, e);
            key
        };
        let t = make(self, true);
        let n = make(self, false);
        let p = self.entries.get_mut(&parent).expect("parent exists");
        p.status = ThreadStatus::Forked;
        p.fork = Some(ForkRecord { branch_pc, taken_child: t, not_taken_child: n, taken_prob: taken_conf });
        Ok((t, n))
    }

    /// Keys of `key`'s descendants, parents before children.
    fn descendants(&self, key: ThreadKey) -> Vec<ThreadKey> {
        let mut out = Vec::new();
        let mut stack = vec![key];
        while let Some(k) = stack.pop() {
            if let Some(f) = &self.entries[&k].fork {
                out.push(f.taken_child);
                out.push(f.not_taken_child);
                stack.push(f.not_taken_child);
                stack.push(f.taken_child);
            }
        }
        out
    }

    fn subtree(&self, key: ThreadKey) -> Vec<ThreadKey> {
        let mut v = vec![key];
        v.extend(self.descendants(key));
        v
    }

    fn invalidate(&mut self, keys: &[ThreadKey]) -> Vec<PathId> {
        let mut paths = Vec::with_capacity(keys.len());
        for k in keys {
            let e = self.entries.remove(k).expect("subtree entry");
            self.live.remove(&e.path);
            paths.push(e.path);
        }
        paths
    }

    pub fn resolve_branch(&mut self, fork: &ForkPoint, actual_taken: bool) -> Result<Resolution, ThreadError> {
        let key = self.key_of(&fork.parent).ok_or(ThreadError::UnknownFork(*fork))?;
        let e = &self.entries[&key];
        let matches = e.thread_level() == fork.level && e.fork.as_ref().is_some_and(|f| f.branch_pc == fork.branch_pc);
        if !matches {
            return Err(ThreadError::UnknownFork(*fork));
        }
        self.resolve_key(key, actual_taken)
    }

    /// Resolves the pending fork of `parent`: the losing arm's subtree is
    /// invalidated and the winning arm replaces the parent.
    pub fn resolve_key(&mut self, parent: ThreadKey, actual_taken: bool) -> Result<Resolution, ThreadError> {
        let p = self.live_entry(parent)?;
        let fork = p.fork.ok_or(ThreadError::WrongStatus {
            path: p.path,
            status: p.status,
            expected: ThreadStatus::Forked,
        })?;
        let (level, parent_path, grandparent, parent_addr) = (p.thread_level(), p.path, p.parent, p.forked_branch_addr);
        let (win, lose, arm) = if actual_taken {
            (fork.taken_child, fork.not_taken_child, fork.taken_prob)
        } else {
            (fork.not_taken_child, fork.taken_child, F::one() - fork.taken_prob)
        };

        let invalidated_keys = self.subtree(lose);
        let invalidated = self.invalidate(&invalidated_keys);

        let winners = self.subtree(win);
        for k in &winners {
            self.live.remove(&self.entries[k].path);
        }
        for k in &winners {
            let e = self.entries.get_mut(k).expect("winner entry");
            e.path = e.path.remove_bit(level);
            e.path_confidence = e.path_confidence / arm;
            self.live.insert(e.path, *k);
        }
        debug_assert_eq!(self.entries[&win].path, parent_path);

        self.live.remove(&parent_path);
        self.live.insert(parent_path, win);
        {
            let w = self.entries.get_mut(&win).expect("winner");
            w.parent = grandparent;
            w.forked_branch_addr = parent_addr;
        }
        {
            let p = self.entries.get_mut(&parent).expect("parent");
            p.status = ThreadStatus::Merged;
            p.fork = None;
            p.merged_into = Some(win);
        }
        match grandparent {
            Some(g) => {
                let f = self.entries.get_mut(&g).and_then(|g| g.fork.as_mut()).expect("grandparent fork");
                if f.taken_child == parent {
                    f.taken_child = win;
                } else {
                    f.not_taken_child = win;
                }
            }
            None => self.root = win,
        }
        Ok(Resolution { invalidated, invalidated_keys, survivor: win, merged: parent })
    }

    /// Invalidates every descendant of `key` and makes it an active leaf
    /// again, fetching from `next_pc`. Used for misprediction recovery.
    pub fn prune_descendants(&mut self, key: ThreadKey, next_pc: u64) -> Result<Vec<ThreadKey>, ThreadError> {
        self.live_entry(key)?;
        let dead = self.descendants(key);
        self.invalidate(&dead);
        let e = self.entries.get_mut(&key).expect("checked");
        e.fork = None;
        e.status = ThreadStatus::Active;
        e.next_pc = next_pc;
        Ok(dead)
    }

    /// Structural checks used by tests and debug builds.
    pub fn check_invariants(&self) -> Result<(), String> {
        let leaves = self.active_threads();
        for (i, a) in leaves.iter().enumerate() {
            if a.thread_level() > self.max_levels {
                return Err(format!("{} exceeds {} levels", a.path, self.max_levels));
            }
            for b in &leaves[i + 1..] {
                if a.path.is_prefix_of(&b.path) || b.path.is_prefix_of(&a.path) {
                    return Err(format!("active paths {} and {} are nested", a.path, b.path));
                }
            }
        }
        for (path, k) in &self.live {
            let e = &self.entries[k];
            if e.path != *path {
                return Err(format!("index says {path}, entry says {}", e.path));
            }
            if let Some(f) = &e.fork {
                let t = &self.entries[&f.taken_child];
                let n = &self.entries[&f.not_taken_child];
                if t.path != path.child(true) || n.path != path.child(false) {
                    return Err(format!("children of {path} are {} and {}", t.path, n.path));
                }
                let sum = t.path_confidence + n.path_confidence;
                let tol = F::from(1e-4).unwrap() * e.path_confidence;
                if (sum - e.path_confidence).abs() > tol {
                    return Err(format!("confidence not conserved below {path}"));
                }
            }
        }
        Ok(())
    }
}
