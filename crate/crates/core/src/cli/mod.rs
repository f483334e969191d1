//! The `mpsim` command line.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 I/O failure,
//! 4 trace too short for the requested windows, 5 simulator fault.

mod config;

pub use config::{CliConfig, ConfigError};

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fetch_scheduler::PolicyKind;
use crate::metrics_report::{self, ReportError, ReportFormat, ReportRow};
use crate::pipeline::{self, compute_ipc, MachineConfig, RunStats, SimError};
use crate::trace_model::{self, TraceError, TraceRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TOO_SHORT: i32 = 4;
pub const EXIT_FAULT: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    TooShort(String),
    #[error("{0}")]
    Fault(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::TooShort(_) => EXIT_TOO_SHORT,
            CliError::Fault(_) => EXIT_FAULT,
        }
    }
}

/// Command-line spelling of a configuration field, if it has one.
fn flag_for(field: &str) -> Option<&'static str> {
    Some(match field {
        "policy" => "--policy",
        "fetch_width" => "--width",
        "max_branch_levels" => "--levels",
        "target_ipc" => "--target-ipc",
        "warmup_instructions" => "--warmup",
        "measure_instructions" => "--measure",
        "instruction_count" => "--insts",
        "branch_fraction" => "--branch-frac",
        "hard_branch_fraction" => "--hard-frac",
        "biased_taken_probability" => "--bias",
        "static_branch_count" => "--static-branches",
        "seed" => "--seed",
        _ => return None,
    })
}

fn invalid(field: &str, reason: &str) -> CliError {
    match flag_for(field) {
        Some(flag) => CliError::Usage(format!("invalid {flag} (config key {field}): {reason}")),
        None => CliError::Usage(format!("invalid config key {field}: {reason}")),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(format!("reading config: {e}")),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::InvalidSpec { field, reason } => invalid(field, &reason),
            other => CliError::Io(format!("trace: {other}")),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config { field, reason } => invalid(field, &reason),
            SimError::Predictor(p) => CliError::Usage(format!("invalid predictor configuration: {p}")),
            SimError::Trace(t) => CliError::Io(format!("trace: {t}")),
            SimError::TraceTooShort { .. } => CliError::TooShort(e.to_string()),
            SimError::Fault { .. } | SimError::Undefined(_) => CliError::Fault(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Empty => CliError::Usage(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mpsim", version, about = "Cycle-level simulator of multi-path instruction fetch policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace file.
    GenTrace(GenTraceArgs),
    /// Simulate one policy on a trace.
    Run(RunArgs),
    /// Simulate several policies on the same trace and emit one report.
    Compare(CompareArgs),
    /// Derive a metric table from saved stats files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub insts: Option<u64>,
    #[arg(long)]
    pub branch_frac: Option<f64>,
    #[arg(long)]
    pub hard_frac: Option<f64>,
    /// Taken probability of the predictable branch sites.
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long)]
    pub static_branches: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MachineArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fetch width in instructions per cycle.
    #[arg(long)]
    pub width: Option<usize>,
    /// Maximum unresolved forked branches along a path.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Slice size for selective-dee.
    #[arg(long)]
    pub target_ipc: Option<usize>,
    /// Committed instructions before measurement starts.
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Committed instructions to measure. Defaults to the rest of the trace.
    #[arg(long)]
    pub measure: Option<u64>,
}

const POLICY_HELP: &str = "perfect (perfect_single), gshare (gshare_single), divided (divided_eager), \
dee, selective-dee (selective_dee), dynamic-dee (dynamic_dee)";

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, help = format!("Fetch policy: {POLICY_HELP}"))]
    pub policy: String,
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Stats JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run label. Defaults to the trace file stem.
    #[arg(long)]
    pub label: Option<String>,
    /// Free-form metadata stored in the stats file.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_delimiter = ',', help = format!("Comma-separated fetch policies: {POLICY_HELP}"))]
    pub policies: Vec<String>,
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Report output. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// Mispredictions split by static-branch error rate.
    #[value(name = "fig1-buckets")]
    Buckets,
    /// Conditional-branch recoveries per conditional branch.
    #[value(name = "fig4-recoveries")]
    Recoveries,
    /// Confidence estimator quality.
    #[value(name = "fig5-confidence")]
    Confidence,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    /// Stats JSON files written by `run`.
    #[arg(required = true)]
    pub stats: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a stats file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub stats: RunStats,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<CliConfig, CliError> {
    Ok(match path {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    })
}

fn machine_config(args: &MachineArgs, policy: Option<PolicyKind>) -> Result<MachineConfig, CliError> {
    let mut m = load_config(args.config.as_deref())?.machine;
    if let Some(p) = policy {
        m.policy = p;
    }
    if let Some(w) = args.width {
        m.fetch_width = w;
    }
    if let Some(l) = args.levels {
        m.max_branch_levels = l;
    }
    if let Some(t) = args.target_ipc {
        m.target_ipc = t;
    }
    if let Some(w) = args.warmup {
        m.warmup_instructions = w;
    }
    if args.measure.is_some() {
        m.measure_instructions = args.measure;
    }
    Ok(m)
}

fn parse_policy(s: &str) -> Result<PolicyKind, CliError> {
    s.trim().parse().map_err(|e| CliError::Usage(format!("invalid --policy: {e}")))
}

fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, CliError> {
    trace_model::read_trace_file(path).map_err(|e| CliError::Io(format!("reading trace: {e}")))
}

fn default_label(trace: &Path) -> String {
    trace.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned())
}

/// Opens `out` or stdout, runs `f`, flushes.
fn with_output<F>(out: Option<&Path>, stdout: &mut dyn Write, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    match out {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_err(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| io_err(p, e))
        }
        None => {
            f(stdout)?;
            stdout.flush().map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

pub fn cmd_gen_trace(args: &GenTraceArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut spec = load_config(args.config.as_deref())?.trace;
    if let Some(n) = args.insts {
        spec.instruction_count = n;
    }
    if let Some(f) = args.branch_frac {
        spec.branch_fraction = f;
    }
    if let Some(f) = args.hard_frac {
        spec.hard_branch_fraction = f;
    }
    if let Some(b) = args.bias {
        spec.biased_taken_probability = b;
    }
    if let Some(s) = args.static_branches {
        spec.static_branch_count = s;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let records = trace_model::generate_synthetic_trace(&spec)?;
    trace_model::write_trace_file(&records, &args.out)?;
    let branches = records.iter().filter(|r| r.op == trace_model::OpClass::BranchCond).count();
    writeln!(
        stdout,
        "wrote {} instructions ({branches} conditional branches, seed {}) to {}",
        records.len(),
        spec.seed,
        args.out.display()
    )
    .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn summary_line(label: &str, s: &RunStats) -> String {
    format!(
        "{label} {} ipc {} committed {} cycles {} recovery_pct {}",
        s.policy.name(),
        metrics_report::fmt_metric(compute_ipc(s).ok()),
        s.committed_instructions,
        s.cycles,
        metrics_report::fmt_metric(metrics_report::recovery_percentage(s)),
    )
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let policy = parse_policy(&args.policy)?;
    let cfg = machine_config(&args.machine, Some(policy))?;
    cfg.validate()?;
    let trace = load_trace(&args.trace)?;
    let oracle = trace_model::capture_branch_oracle(&trace);
    let stats = pipeline::run(&trace, &oracle, &cfg)?;
    let label = args.label.clone().unwrap_or_else(|| default_label(&args.trace));
    if let Some(out) = &args.out {
        let file = StatsFile { label: label.clone(), tag: args.tag.clone(), stats: stats.clone() };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Fault(e.to_string()))?;
        text.push('\n');
        std::fs::write(out, text).map_err(|e| io_err(out, e))?;
    }
    writeln!(stdout, "{}", summary_line(&label, &stats)).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.policies.is_empty() {
        return Err(CliError::Usage("invalid --policies: no policies given".into()));
    }
    let policies = args.policies.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>, _>>()?;
    let base = machine_config(&args.machine, None)?;
    // Catch errors every row would share before doing any work.
    for &p in &policies {
        MachineConfig { policy: p, ..base.clone() }.validate()?;
    }
    let trace = load_trace(&args.trace)?;
    let oracle = trace_model::capture_branch_oracle(&trace);
    let label = args.label.clone().unwrap_or_else(|| default_label(&args.trace));

    let results: Vec<Result<RunStats, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter()
            .map(|&p| {
                let cfg = MachineConfig { policy: p, ..base.clone() };
                let (trace, oracle) = (&trace, &oracle);
                scope.spawn(move || pipeline::run(trace, oracle, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| Err(SimError::Fault { cycle: 0, reason: "simulation panicked".into() }))
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (p, r) in policies.iter().zip(results) {
        match r {
            Ok(s) => rows.push(ReportRow::from_stats(&label, &s)),
            Err(e) => {
                rows.push(ReportRow::failed(
                    &label,
                    p.name(),
                    base.fetch_width,
                    base.max_branch_levels,
                    &e.to_string(),
                ));
                first_err.get_or_insert(e);
            }
        }
    }
    with_output(args.out.as_deref(), stdout, |w| Ok(metrics_report::write_rows(&rows, args.format.into(), w)?))?;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn read_stats_file(path: &Path) -> Result<StatsFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, format!("not a stats file: {e}")))
}

pub fn cmd_report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let files = args.stats.iter().map(|p| read_stats_file(p)).collect::<Result<Vec<_>, _>>()?;
    let entries: Vec<(&str, &RunStats)> = files.iter().map(|f| (f.label.as_str(), &f.stats)).collect();
    let (header, rows) = match args.kind {
        ReportKind::Buckets => metrics_report::buckets_table(&entries),
        ReportKind::Recoveries => metrics_report::recoveries_table(&entries),
        ReportKind::Confidence => metrics_report::confidence_table(&entries),
    };
    with_output(args.out.as_deref(), stdout, |w| Ok(metrics_report::write_csv_table(&header, &rows, w)?))
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenTrace(a) => cmd_gen_trace(a, stdout),
        Command::Run(a) => cmd_run(a, stdout),
        Command::Compare(a) => cmd_compare(a, stdout),
        Command::Report(a) => cmd_report(a, stdout),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
