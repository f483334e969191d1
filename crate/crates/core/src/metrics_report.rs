//! Derived metrics over finished runs and the CSV/JSON report writers.
//!
//! Undefined values (zero denominators) are `None` in memory, `NA` in CSV and
//! `null` in JSON.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{compute_ipc, BranchStat, RunStats};
use crate::predictors::ConfusionMatrix;

pub const NA: &str = "NA";

/// Lower edge of the middle error band. Rates equal to it count as low.
pub const LOW_EDGE: f64 = 0.3;
/// Upper edge of the middle error band, inclusive.
pub const HIGH_EDGE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no entries")]
    Empty,
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceQuality {
    /// Share of low-confidence predictions that were wrong.
    pub pvn: Option<f64>,
    /// Share of high-confidence predictions that were right.
    pub pvp: Option<f64>,
    /// Share of correct predictions marked high.
    pub sensitivity: Option<f64>,
    /// Share of mispredictions marked low.
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

pub fn confidence_quality(m: &ConfusionMatrix) -> ConfidenceQuality {
    ConfidenceQuality {
        pvn: ratio(m.lo_wrong, m.lo_wrong + m.lo_correct),
        pvp: ratio(m.hi_correct, m.hi_correct + m.hi_wrong),
        sensitivity: ratio(m.hi_correct, m.hi_correct + m.lo_correct),
        specificity: ratio(m.lo_wrong, m.lo_wrong + m.hi_wrong),
    }
}

/// Dynamic mispredictions split by the error rate of their static branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBuckets {
    /// Error rate at most 0.3.
    pub fraction_le_03: f64,
    pub fraction_gt_03: f64,
    /// Error rate in (0.3, 0.7].
    pub fraction_03_to_07: f64,
    pub fraction_gt_07: f64,
    pub static_branches: u64,
    pub mispredictions: u64,
}

/// Branches with no executions are ignored. With no mispredictions at all
/// every fraction is zero.
pub fn error_buckets(per_branch: &[BranchStat]) -> ErrorBuckets {
    let (mut low, mut mid, mut high) = (0u64, 0u64, 0u64);
    let mut statics = 0;
    for b in per_branch.iter().filter(|b| b.executions > 0) {
        statics += 1;
        let e = b.mispredictions as f64 / b.executions as f64;
        let band = if e <= LOW_EDGE {
            &mut low
        } else if e <= HIGH_EDGE {
            &mut mid
        } else {
            &mut high
        };
        *band += b.mispredictions;
    }
    let total = low + mid + high;
    let frac = |n: u64| ratio(n, total).unwrap_or(0.0);
    ErrorBuckets {
        fraction_le_03: frac(low),
        fraction_gt_03: frac(mid + high),
        fraction_03_to_07: frac(mid),
        fraction_gt_07: frac(high),
        static_branches: statics,
        mispredictions: total,
    }
}

/// Conditional-branch recoveries per executed conditional branch.
pub fn recovery_percentage(stats: &RunStats) -> Option<f64> {
    ratio(stats.recoveries, stats.cond_branches)
}

/// One flat report row. Failed runs keep their label and policy and leave
/// the metrics undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub policy: String,
    pub fetch_width: usize,
    pub max_levels: usize,
    pub ipc: Option<f64>,
    pub recovery_pct: Option<f64>,
    pub pvn: Option<f64>,
    pub pvp: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub mispred_frac_le_03: Option<f64>,
    pub mispred_frac_gt_03: Option<f64>,
    pub mispred_frac_03_07: Option<f64>,
    pub mispred_frac_gt_07: Option<f64>,
    pub status: String,
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "label",
    "policy",
    "fetch_width",
    "max_levels",
    "ipc",
    "recovery_pct",
    "pvn",
    "pvp",
    "sensitivity",
    "specificity",
    "mispred_frac_le_03",
    "mispred_frac_gt_03",
    "mispred_frac_03_07",
    "mispred_frac_gt_07",
    "status",
];

impl ReportRow {
    pub fn from_stats(label: &str, stats: &RunStats) -> Self {
        let q = confidence_quality(&stats.confusion);
        let b = error_buckets(&stats.per_branch);
        let has_miss = b.mispredictions > 0;
        let bucket = |v: f64| has_miss.then_some(v);
        ReportRow {
            label: label.to_string(),
            policy: stats.policy.name().to_string(),
            fetch_width: stats.fetch_width,
            max_levels: stats.max_levels,
            ipc: compute_ipc(stats).ok(),
            recovery_pct: recovery_percentage(stats),
            pvn: q.pvn,
            pvp: q.pvp,
            sensitivity: q.sensitivity,
            specificity: q.specificity,
            mispred_frac_le_03: bucket(b.fraction_le_03),
            mispred_frac_gt_03: bucket(b.fraction_gt_03),
            mispred_frac_03_07: bucket(b.fraction_03_to_07),
            mispred_frac_gt_07: bucket(b.fraction_gt_07),
            status: "ok".into(),
        }
    }

    pub fn failed(label: &str, policy: &str, fetch_width: usize, max_levels: usize, reason: &str) -> Self {
        ReportRow {
            label: label.to_string(),
            policy: policy.to_string(),
            fetch_width,
            max_levels,
            ipc: None,
            recovery_pct: None,
            pvn: None,
            pvp: None,
            sensitivity: None,
            specificity: None,
            mispred_frac_le_03: None,
            mispred_frac_gt_03: None,
            mispred_frac_03_07: None,
            mispred_frac_gt_07: None,
            status: format!("failed: {reason}"),
        }
    }

    fn fields(&self) -> Vec<String> {
        let m = |v: Option<f64>| fmt_metric(v);
        vec![
            self.label.clone(),
            self.policy.clone(),
            self.fetch_width.to_string(),
            self.max_levels.to_string(),
            m(self.ipc),
            m(self.recovery_pct),
            m(self.pvn),
            m(self.pvp),
            m(self.sensitivity),
            m(self.specificity),
            m(self.mispred_frac_le_03),
            m(self.mispred_frac_gt_03),
            m(self.mispred_frac_03_07),
            m(self.mispred_frac_gt_07),
            self.status.clone(),
        ]
    }
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// Writes a header line and one record per row.
pub fn write_csv_table<W: Write>(header: &[&str], rows: &[Vec<String>], w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rows<W: Write>(rows: &[ReportRow], format: ReportFormat, mut w: W) -> Result<(), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => {
            let fields: Vec<_> = rows.iter().map(ReportRow::fields).collect();
            write_csv_table(&REPORT_COLUMNS, &fields, w)
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

pub fn emit_report<W: Write>(entries: &[(&str, &RunStats)], format: ReportFormat, w: W) -> Result<(), ReportError> {
    let rows: Vec<_> = entries.iter().map(|(l, s)| ReportRow::from_stats(l, s)).collect();
    write_rows(&rows, format, w)
}

/// Per-run bucket table.
pub fn buckets_table(entries: &[(&str, &RunStats)]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "label",
        "policy",
        "static_branches",
        "mispredictions",
        "mispred_frac_le_03",
        "mispred_frac_gt_03",
        "mispred_frac_03_07",
        "mispred_frac_gt_07",
    ];
    let rows = entries
        .iter()
        .map(|(l, s)| {
            let b = error_buckets(&s.per_branch);
            let f = |v: f64| fmt_metric((b.mispredictions > 0).then_some(v));
            vec![
                l.to_string(),
                s.policy.name().to_string(),
                b.static_branches.to_string(),
                b.mispredictions.to_string(),
                f(b.fraction_le_03),
                f(b.fraction_gt_03),
                f(b.fraction_03_to_07),
                f(b.fraction_gt_07),
            ]
        })
        .collect();
    (header, rows)
}

pub fn recoveries_table(entries: &[(&str, &RunStats)]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header =
        vec!["label", "policy", "max_levels", "cond_branches", "recoveries", "uncond_recoveries", "recovery_pct"];
    let rows = entries
        .iter()
        .map(|(l, s)| {
            vec![
                l.to_string(),
                s.policy.name().to_string(),
                s.max_levels.to_string(),
                s.cond_branches.to_string(),
                s.recoveries.to_string(),
                s.uncond_recoveries.to_string(),
                fmt_metric(recovery_percentage(s)),
            ]
        })
        .collect();
    (header, rows)
}

pub fn confidence_table(entries: &[(&str, &RunStats)]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "label",
        "policy",
        "hi_correct",
        "hi_wrong",
        "lo_correct",
        "lo_wrong",
        "pvn",
        "pvp",
        "sensitivity",
        "specificity",
    ];
    let rows = entries
        .iter()
        .map(|(l, s)| {
            let m = s.confusion;
            let q = confidence_quality(&m);
            vec![
                l.to_string(),
                s.policy.name().to_string(),
                m.hi_correct.to_string(),
                m.hi_wrong.to_string(),
                m.lo_correct.to_string(),
                m.lo_wrong.to_string(),
                fmt_metric(q.pvn),
                fmt_metric(q.pvp),
                fmt_metric(q.sensitivity),
                fmt_metric(q.specificity),
            ]
        })
        .collect();
    (header, rows)
}
