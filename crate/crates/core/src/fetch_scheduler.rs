//! Fetch policies: how one cycle's fetch bandwidth is split across paths.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thread_manager::{PathId, ThreadEntry, ThreadKey, DEFAULT_MAX_BRANCH_LEVELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// One path, conditional branches resolved by the recorded outcomes.
    PerfectSingle,
    /// One path, gshare direction prediction.
    GshareSingle,
    /// Every path forks; fetch is split evenly across all of them.
    DividedEager,
    /// Every path forks; only the most likely path fetches.
    Dee,
    /// Every path forks; the most likely few fetch a fixed slice each.
    SelectiveDee,
    /// Every path forks; fetch is proportional to path confidence.
    DynamicDee,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::PerfectSingle,
        PolicyKind::GshareSingle,
        PolicyKind::DividedEager,
        PolicyKind::Dee,
        PolicyKind::SelectiveDee,
        PolicyKind::DynamicDee,
    ];

    /// Canonical identifier used in reports.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::PerfectSingle => "perfect_single",
            PolicyKind::GshareSingle => "gshare_single",
            PolicyKind::DividedEager => "divided_eager",
            PolicyKind::Dee => "dee",
            PolicyKind::SelectiveDee => "selective_dee",
            PolicyKind::DynamicDee => "dynamic_dee",
        }
    }

    /// Short identifier used on the command line.
    pub fn flag_name(self) -> &'static str {
        match self {
            PolicyKind::PerfectSingle => "perfect",
            PolicyKind::GshareSingle => "gshare",
            PolicyKind::DividedEager => "divided",
            PolicyKind::Dee => "dee",
            PolicyKind::SelectiveDee => "selective-dee",
            PolicyKind::DynamicDee => "dynamic-dee",
        }
    }

    pub fn is_eager(self) -> bool {
        !matches!(self, PolicyKind::PerfectSingle | PolicyKind::GshareSingle)
    }

    /// Whether forks are weighted by the confidence estimator.
    pub fn uses_confidence(self) -> bool {
        matches!(self, PolicyKind::Dee | PolicyKind::SelectiveDee | PolicyKind::DynamicDee)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL.into_iter().find(|p| p.name() == s || p.flag_name() == s).ok_or_else(|| {
            let names: Vec<_> = PolicyKind::ALL.iter().map(|p| p.flag_name()).collect();
            format!("unknown policy `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub kind: PolicyKind,
    pub fetch_width: usize,
    /// Slice size for selective DEE.
    pub target_ipc: usize,
    pub max_branch_levels: usize,
}

impl FetchPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        FetchPolicy { kind, fetch_width: 32, target_ipc: 8, max_branch_levels: DEFAULT_MAX_BRANCH_LEVELS }
    }

    pub fn validate(&self) -> Result<(), FetchError> {
        if self.fetch_width == 0 {
            return Err(FetchError::InvalidPolicy("fetch_width must be at least 1".into()));
        }
        if self.target_ipc == 0 {
            return Err(FetchError::InvalidPolicy("target_ipc must be at least 1".into()));
        }
        if self.kind == PolicyKind::SelectiveDee && !self.fetch_width.is_multiple_of(self.target_ipc) {
            return Err(FetchError::InvalidPolicy(format!(
                "fetch_width {} is not a multiple of target_ipc {}",
                self.fetch_width, self.target_ipc
            )));
        }
        if self.max_branch_levels > PathId::MAX_LEN {
            return Err(FetchError::InvalidPolicy(format!(
                "max_branch_levels {} exceeds {}",
                self.max_branch_levels,
                PathId::MAX_LEN
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FetchError {
    #[error("no fetchable thread")]
    NoThreads,
    #[error("thread {0} has a negative or non-finite confidence")]
    BadConfidence(PathId),
    #[error("invalid fetch policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FetchCandidate<F> {
    pub path: PathId,
    pub confidence: F,
}

/// Highest confidence first; ties go to the lower level, then the smaller id.
fn priority_order<F: Float>(threads: &[FetchCandidate<F>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..threads.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ta, tb) = (&threads[a], &threads[b]);
        tb.confidence.partial_cmp(&ta.confidence).unwrap_or(Ordering::Equal).then_with(|| ta.path.cmp(&tb.path))
    });
    idx
}

fn divide_evenly(width: usize, n: usize) -> Vec<usize> {
    let (base, extra) = (width / n, width % n);
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

/// Largest-remainder apportionment of `width` by `weights`.
fn proportional<F: Float>(width: usize, threads: &[FetchCandidate<F>]) -> Vec<usize> {
    let total = threads.iter().fold(F::zero(), |acc, t| acc + t.confidence);
    if total <= F::zero() {
        return divide_evenly(width, threads.len());
    }
    let w = F::from(width).unwrap();
    let quotas: Vec<F> = threads.iter().map(|t| w * t.confidence / total).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor().to_usize().unwrap_or(0).min(width)).collect();
    let assigned: usize = alloc.iter().sum();
    let mut left = width.saturating_sub(assigned);
    let mut by_remainder: Vec<usize> = (0..threads.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then_with(|| threads[a].path.cmp(&threads[b].path))
    });
    for &i in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    // Rounding in `floor` can overshoot by one at most in degenerate cases.
    let mut over: usize = alloc.iter().sum::<usize>().saturating_sub(width);
    for &i in by_remainder.iter().rev() {
        while over > 0 && alloc[i] > 0 {
            alloc[i] -= 1;
            over -= 1;
        }
    }
    alloc
}

/// Splits `policy.fetch_width` across `threads`, which must be in
/// active-thread order. The result is aligned with `threads` and always sums
/// to the fetch width.
pub fn allocate_fetch<F: Float>(policy: &FetchPolicy, threads: &[FetchCandidate<F>]) -> Result<Vec<usize>, FetchError> {
    if threads.is_empty() {
        return Err(FetchError::NoThreads);
    }
    if let Some(t) = threads.iter().find(|t| !t.confidence.is_finite() || t.confidence < F::zero()) {
        return Err(FetchError::BadConfidence(t.path));
    }
    let width = policy.fetch_width;
    let n = threads.len();
    let mut alloc = vec![0; n];
    match policy.kind {
        PolicyKind::PerfectSingle | PolicyKind::GshareSingle => alloc[0] = width,
        PolicyKind::DividedEager => alloc = divide_evenly(width, n),
        PolicyKind::Dee => alloc[priority_order(threads)[0]] = width,
        PolicyKind::SelectiveDee => {
            let slice = policy.target_ipc.min(width).max(1);
            let slices = width / slice;
            let order = priority_order(threads);
            for &i in order.iter().take(slices) {
                alloc[i] = slice;
            }
            let used: usize = alloc.iter().sum();
            alloc[order[0]] += width - used;
        }
        PolicyKind::DynamicDee => alloc = proportional(width, threads),
    }
    debug_assert_eq!(alloc.iter().sum::<usize>(), width);
    Ok(alloc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForkDecision {
    Fork,
    Predict,
}

/// Eager policies fork until the path reaches the branch-level cap and fall
/// back to the direction predictor from there on.
pub fn should_fork<F: Copy>(policy: &FetchPolicy, thread: &ThreadEntry<F>) -> ForkDecision {
    if policy.kind.is_eager() && thread.thread_level() < policy.max_branch_levels {
        ForkDecision::Fork
    } else {
        ForkDecision::Predict
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FetchRequest {
    pub key: ThreadKey,
    pub path: PathId,
    pub start_pc: u64,
    pub budget: usize,
}

/// Turns an allocation into per-thread fetch requests starting at each
/// thread's next pc. Threads with no allocation are skipped.
pub fn select_fetch_pcs<F: Copy>(allocation: &[usize], threads: &[&ThreadEntry<F>]) -> Vec<FetchRequest> {
    threads
        .iter()
        .zip(allocation)
        .filter(|(_, &n)| n > 0)
        .map(|(t, &n)| FetchRequest { key: t.key, path: t.path, start_pc: t.next_pc, budget: n })
        .collect()
}
