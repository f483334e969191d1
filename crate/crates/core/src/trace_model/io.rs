//! Text trace files.
//!
//! ```text
//! #mpsim-trace-v1
//! 0 0x1000 int_alu 5 3,7 0 0x1004 0x1004
//! 1 0x1004 branch_cond - 5 1 0x2000 0x1008
//! ```
//!
//! Fields are `seq pc op dsts srcs taken target fallthrough`. Register lists
//! are comma-separated, `-` when empty. `taken` is `0` or `1`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchReg, TraceError, TraceRecord};

pub const TRACE_HEADER: &str = "#mpsim-trace-v1";

fn write_regs<W: Write>(w: &mut W, regs: &[ArchReg]) -> std::io::Result<()> {
    if regs.is_empty() {
        return w.write_all(b"-");
    }
    for (i, r) in regs.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        write!(w, "{r}")?;
    }
    Ok(())
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        write!(w, "{} {:#x} {} ", r.seq, r.pc, r.op)?;
        write_regs(&mut w, &r.dst_regs)?;
        w.write_all(b" ")?;
        write_regs(&mut w, &r.src_regs)?;
        writeln!(w, " {} {:#x} {:#x}", u8::from(r.taken), r.target_pc, r.fallthrough_pc)?;
    }
    w.flush()
}

pub fn write_trace_file(records: &[TraceRecord], path: &Path) -> Result<(), TraceError> {
    let io = |source| TraceError::Io { path: path.display().to_string(), source };
    let f = File::create(path).map_err(io)?;
    write_trace(records, BufWriter::new(f)).map_err(io)
}

fn parse_addr(s: &str) -> Result<u64, String> {
    let hex = s.strip_prefix("0x").ok_or_else(|| format!("address `{s}` lacks 0x prefix"))?;
    u64::from_str_radix(hex, 16).map_err(|e| format!("address `{s}`: {e}"))
}

fn parse_regs(s: &str) -> Result<Vec<ArchReg>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|r| r.parse::<ArchReg>().map_err(|e| format!("register `{r}`: {e}"))).collect()
}

fn parse_line(line: &str) -> Result<TraceRecord, String> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let [seq, pc, op, dsts, srcs, taken, target, fall] = fields[..] else {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    };
    Ok(TraceRecord {
        seq: seq.parse().map_err(|e| format!("seq `{seq}`: {e}"))?,
        pc: parse_addr(pc)?,
        op: op.parse()?,
        dst_regs: parse_regs(dsts)?,
        src_regs: parse_regs(srcs)?,
        taken: match taken {
            "0" => false,
            "1" => true,
            other => return Err(format!("taken flag `{other}` is not 0 or 1")),
        },
        target_pc: parse_addr(target)?,
        fallthrough_pc: parse_addr(fall)?,
    })
}

/// Parses a trace. Records are validated individually; whole-trace coherence
/// is left to [`super::validate_trace`].
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| TraceError::Parse { line: lineno, reason: e.to_string() })?;
        let line = line.trim();
        if !saw_header {
            if line != TRACE_HEADER {
                return Err(TraceError::Parse { line: lineno, reason: format!("expected header `{TRACE_HEADER}`") });
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let rec = parse_line(line).map_err(|reason| TraceError::Parse { line: lineno, reason })?;
        if rec.seq != out.len() as u64 {
            return Err(TraceError::Parse {
                line: lineno,
                reason: format!("expected seq {}, found {}", out.len(), rec.seq),
            });
        }
        rec.validate()?;
        out.push(rec);
    }
    if !saw_header {
        return Err(TraceError::Parse { line: 1, reason: "empty file".into() });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let f = File::open(path).map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
    read_trace(f)
}
