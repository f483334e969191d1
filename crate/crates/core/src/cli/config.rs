//! Flat `key = value` configuration files.
//!
//! ```text
//! # machine
//! fetch_width = 32
//! policy = dynamic-dee
//! # trace generation
//! hard_branch_fraction = 0.5
//! ```
//!
//! Keys mirror [`MachineConfig`] and [`TraceSpec`] field names. Nested fields
//! are flattened with an underscore, such as `mul_div_latency` or
//! `gshare_entries`. Unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::pipeline::{MachineConfig, UnitClass};
use crate::trace_model::TraceSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: String },
    #[error("config line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
}

/// Both halves of a configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CliConfig {
    pub machine: MachineConfig,
    pub trace: TraceSpec,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

/// Integers may be written with `_` separators.
fn int<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    parse(&v.replace('_', ""))
}

impl CliConfig {
    /// Every accepted key with its current value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let m = &self.machine;
        let t = &self.trace;
        let mut out = vec![
            ("policy".to_string(), m.policy.flag_name().to_string()),
            ("fetch_width".into(), m.fetch_width.to_string()),
            ("target_ipc".into(), m.target_ipc.to_string()),
            ("max_branch_levels".into(), m.max_branch_levels.to_string()),
            ("window_size".into(), m.window_size.to_string()),
            ("issue_width".into(), m.issue_width.to_string()),
            ("writeback_width".into(), m.writeback_width.to_string()),
            ("complete_width".into(), m.complete_width.to_string()),
            ("commit_width".into(), m.commit_width.to_string()),
            ("frontend_depth".into(), m.frontend_depth.to_string()),
        ];
        for c in UnitClass::ALL {
            let u = m.units.get(c);
            out.push((format!("{}_count", c.name()), u.count.to_string()));
            out.push((format!("{}_latency", c.name()), u.latency.to_string()));
        }
        out.extend([
            ("gshare_entries".into(), m.gshare.entries.to_string()),
            ("gshare_history_bits".into(), m.gshare.history_bits.to_string()),
            ("btb_sets".into(), m.btb.sets.to_string()),
            ("btb_ways".into(), m.btb.ways.to_string()),
            ("confidence_entries".into(), m.confidence.entries.to_string()),
            ("phys_tags".into(), m.phys_tags.to_string()),
            ("warmup_instructions".into(), m.warmup_instructions.to_string()),
            ("measure_instructions".into(), m.measure_instructions.map_or("all".into(), |n| n.to_string())),
            ("stall_limit".into(), m.stall_limit.to_string()),
            ("instruction_count".into(), t.instruction_count.to_string()),
            ("branch_fraction".into(), t.branch_fraction.to_string()),
            ("hard_branch_fraction".into(), t.hard_branch_fraction.to_string()),
            ("biased_taken_probability".into(), t.biased_taken_probability.to_string()),
            ("static_branch_count".into(), t.static_branch_count.to_string()),
            ("seed".into(), t.seed.to_string()),
        ]);
        let mix = &t.op_class_mix;
        for (k, v) in [
            ("int_alu", mix.int_alu),
            ("load", mix.load),
            ("store", mix.store),
            ("mul_div", mix.mul_div),
            ("float_special", mix.float_special),
            ("branch_cond", mix.branch_cond),
            ("branch_uncond", mix.branch_uncond),
        ] {
            out.push((format!("mix_{k}"), v.to_string()));
        }
        out
    }

    /// Applies one key. `Ok(false)` means the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let m = &mut self.machine;
        let t = &mut self.trace;
        match key {
            "policy" => m.policy = parse(v)?,
            "fetch_width" => m.fetch_width = int(v)?,
            "target_ipc" => m.target_ipc = int(v)?,
            "max_branch_levels" => m.max_branch_levels = int(v)?,
            "window_size" => m.window_size = int(v)?,
            "issue_width" => m.issue_width = int(v)?,
            "writeback_width" => m.writeback_width = int(v)?,
            "complete_width" => m.complete_width = int(v)?,
            "commit_width" => m.commit_width = int(v)?,
            "frontend_depth" => m.frontend_depth = int(v)?,
            "gshare_entries" => m.gshare.entries = int(v)?,
            "gshare_history_bits" => m.gshare.history_bits = int(v)?,
            "btb_sets" => m.btb.sets = int(v)?,
            "btb_ways" => m.btb.ways = int(v)?,
            "confidence_entries" => m.confidence.entries = int(v)?,
            "phys_tags" => m.phys_tags = int(v)?,
            "warmup_instructions" => m.warmup_instructions = int(v)?,
            "measure_instructions" => {
                m.measure_instructions = if v == "all" { None } else { Some(int(v)?) };
            }
            "stall_limit" => m.stall_limit = int(v)?,
            "instruction_count" => t.instruction_count = int(v)?,
            "branch_fraction" => t.branch_fraction = parse(v)?,
            "hard_branch_fraction" => t.hard_branch_fraction = parse(v)?,
            "biased_taken_probability" => t.biased_taken_probability = parse(v)?,
            "static_branch_count" => t.static_branch_count = int(v)?,
            "seed" => t.seed = int(v)?,
            _ => {
                if let Some(rest) = key.strip_prefix("mix_") {
                    let mix = &mut t.op_class_mix;
                    let slot = match rest {
                        "int_alu" => &mut mix.int_alu,
                        "load" => &mut mix.load,
                        "store" => &mut mix.store,
                        "mul_div" => &mut mix.mul_div,
                        "float_special" => &mut mix.float_special,
                        "branch_cond" => &mut mix.branch_cond,
                        "branch_uncond" => &mut mix.branch_uncond,
                        _ => return Ok(false),
                    };
                    *slot = parse(v)?;
                    return Ok(true);
                }
                let Some(class) = UnitClass::ALL.into_iter().find(|c| key.starts_with(c.name())) else {
                    return Ok(false);
                };
                let unit = m.units.get_mut(class);
                match &key[class.name().len()..] {
                    "_count" => unit.count = int(v)?,
                    "_latency" => unit.latency = int(v)?,
                    _ => return Ok(false),
                }
            }
        }
        Ok(true)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = CliConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(ConfigError::UnknownKey { line, key: key.into() }),
                Err(reason) => {
                    return Err(ConfigError::BadValue { line, key: key.into(), value: value.into(), reason })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse_str(&text)
    }

    /// The full configuration as a file [`CliConfig::parse_str`] accepts.
    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetch_scheduler::PolicyKind;

    #[test]
    fn defaults_and_overrides() {
        let c = CliConfig::parse_str(
            "# comment\n\nfetch_width = 8  # trailing\npolicy = selective-dee\nmul_div_latency = 7\nseed = 1_000\nmix_load = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.machine.fetch_width, 8);
        assert_eq!(c.machine.policy, PolicyKind::SelectiveDee);
        assert_eq!(c.machine.units.mul_div.latency, 7);
        assert_eq!(c.machine.units.mul_div.count, 20);
        assert_eq!(c.trace.seed, 1000);
        assert_eq!(c.trace.op_class_mix.load, 0.5);
        assert_eq!(c.machine.window_size, 4096);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(CliConfig::parse_str("bogus = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(CliConfig::parse_str("int_alu_speed = 1"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(CliConfig::parse_str("mix_fpu = 1"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(CliConfig::parse_str("\nfetch_width 3"), Err(ConfigError::Syntax { line: 2 })));
        assert!(matches!(CliConfig::parse_str("fetch_width = x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(CliConfig::parse_str("policy = oracle"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(CliConfig::parse_str("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn render_round_trips() {
        let mut c = CliConfig::default();
        c.machine.measure_instructions = Some(500);
        c.machine.btb.ways = 4;
        c.trace.hard_branch_fraction = 0.25;
        let back = CliConfig::parse_str(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(CliConfig::parse_str(&CliConfig::default().render()).unwrap(), CliConfig::default());
    }
}
