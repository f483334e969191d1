//! Seeded synthetic workloads.
//!
//! The generator lays out a static program and then walks it. The program is
//! a ring of `static_branch_count` branch sites. Between consecutive sites
//! sits a straight-line region of non-branch code, present in two copies: one
//! reached by falling through the previous branch, one at its taken target.
//! Both copies carry the same instructions, so either arm of a branch
//! reconverges on the next site after doing the same work. Branch outcomes
//! are drawn per dynamic visit: hard sites are fair coins, the rest follow
//! `biased_taken_probability`.
//!
//! The total region length around the ring is fixed so that branches make up
//! `branch_fraction` of every full lap.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchReg, OpClass, TraceError, TraceRecord, NUM_ARCH_REGS};

const CODE_BASE: u64 = 0x1000;

/// Relative weights of instruction classes.
///
/// Branch classes are weighed against each other to pick each static site's
/// kind; the five non-branch classes are weighed against each other to fill
/// the regions. How many records are branches is set by
/// [`TraceSpec::branch_fraction`], not by these weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpMix {
    pub int_alu: f64,
    pub load: f64,
    pub store: f64,
    pub mul_div: f64,
    pub float_special: f64,
    pub branch_cond: f64,
    pub branch_uncond: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            int_alu: 0.45,
            load: 0.25,
            store: 0.10,
            mul_div: 0.05,
            float_special: 0.15,
            branch_cond: 0.95,
            branch_uncond: 0.05,
        }
    }
}

impl OpMix {
    fn body_weights(&self) -> [(OpClass, f64); 5] {
        [
            (OpClass::IntAlu, self.int_alu),
            (OpClass::Load, self.load),
            (OpClass::Store, self.store),
            (OpClass::MulDiv, self.mul_div),
            (OpClass::FloatSpecial, self.float_special),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub instruction_count: u64,
    pub branch_fraction: f64,
    /// Fraction of static conditional sites whose outcome is a fair coin.
    pub hard_branch_fraction: f64,
    /// Taken probability of the remaining conditional sites.
    pub biased_taken_probability: f64,
    pub static_branch_count: u32,
    pub op_class_mix: OpMix,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            instruction_count: 100_000,
            branch_fraction: 0.2,
            hard_branch_fraction: 0.2,
            biased_taken_probability: 0.95,
            static_branch_count: 64,
            op_class_mix: OpMix::default(),
            seed: 1,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        fn ratio(field: &'static str, v: f64) -> Result<(), TraceError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(TraceError::InvalidSpec { field, reason: format!("{v} is not in [0, 1]") })
            }
        }
        if self.instruction_count == 0 {
            return Err(TraceError::InvalidSpec { field: "instruction_count", reason: "must be at least 1".into() });
        }
        if self.static_branch_count == 0 {
            return Err(TraceError::InvalidSpec { field: "static_branch_count", reason: "must be at least 1".into() });
        }
        ratio("branch_fraction", self.branch_fraction)?;
        ratio("hard_branch_fraction", self.hard_branch_fraction)?;
        ratio("biased_taken_probability", self.biased_taken_probability)?;

        let m = &self.op_class_mix;
        let all = [m.int_alu, m.load, m.store, m.mul_div, m.float_special, m.branch_cond, m.branch_uncond];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TraceError::InvalidSpec {
                field: "op_class_mix",
                reason: "weights must be finite and non-negative".into(),
            });
        }
        if self.branch_fraction < 1.0 && m.body_weights().iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(TraceError::InvalidSpec {
                field: "op_class_mix",
                reason: "all non-branch weights are zero".into(),
            });
        }
        if self.branch_fraction > 0.0 && m.branch_cond + m.branch_uncond <= 0.0 {
            return Err(TraceError::InvalidSpec {
                field: "op_class_mix",
                reason: "both branch weights are zero".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SiteKind {
    Uncond,
    Hard,
    Biased,
}

#[derive(Clone, Debug)]
struct Template {
    op: OpClass,
    dst: Vec<ArchReg>,
    src: Vec<ArchReg>,
}

struct Site {
    kind: SiteKind,
    pc: u64,
    src: Vec<ArchReg>,
}

/// Straight-line code leading into one site, with both of its copies.
struct Region {
    body: Vec<Template>,
    fall_addr: u64,
    taken_addr: u64,
}

fn reg(rng: &mut ChaCha8Rng) -> ArchReg {
    rng.gen_range(0..NUM_ARCH_REGS as ArchReg)
}

fn body_template(rng: &mut ChaCha8Rng, classes: &[OpClass], pick: &WeightedIndex<f64>) -> Template {
    let op = classes[pick.sample(rng)];
    let (ndst, nsrc) = match op {
        OpClass::Load => (1, 1),
        OpClass::Store => (0, 2),
        _ => (1, rng.gen_range(1..=2)),
    };
    Template { op, dst: (0..ndst).map(|_| reg(rng)).collect(), src: (0..nsrc).map(|_| reg(rng)).collect() }
}

/// Generates a coherent single-path trace. Deterministic in `spec`.
pub fn generate_synthetic_trace(spec: &TraceSpec) -> Result<Vec<TraceRecord>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.instruction_count;

    let body_w = spec.op_class_mix.body_weights();
    let classes: Vec<OpClass> = body_w.iter().map(|(c, _)| *c).collect();
    let body_pick = WeightedIndex::new(body_w.iter().map(|(_, w)| *w)).ok();

    if spec.branch_fraction <= 0.0 {
        let pick = body_pick.expect("validated non-branch weights");
        return Ok((0..n)
            .map(|seq| {
                let t = body_template(&mut rng, &classes, &pick);
                let pc = CODE_BASE + 4 * seq;
                TraceRecord::simple(seq, pc, t.op, &t.dst, &t.src, pc + 4)
            })
            .collect());
    }

    let sites_n = spec.static_branch_count as usize;
    let mix = &spec.op_class_mix;
    let uncond_share = mix.branch_uncond / (mix.branch_cond + mix.branch_uncond);
    let mut kinds: Vec<SiteKind> =
        (0..sites_n).map(|_| if rng.gen_bool(uncond_share) { SiteKind::Uncond } else { SiteKind::Biased }).collect();
    let mut cond: Vec<usize> = (0..sites_n).filter(|&i| kinds[i] != SiteKind::Uncond).collect();
    cond.shuffle(&mut rng);
    let hard_n = (spec.hard_branch_fraction * cond.len() as f64).round() as usize;
    for &i in &cond[..hard_n] {
        kinds[i] = SiteKind::Hard;
    }

    // Spread the lap's non-branch budget over the regions.
    let body_total = (sites_n as f64 * (1.0 - spec.branch_fraction) / spec.branch_fraction).round() as usize;
    let mut lens = vec![0usize; sites_n];
    for _ in 0..body_total {
        lens[rng.gen_range(0..sites_n)] += 1;
    }

    let mut sites = Vec::with_capacity(sites_n);
    let mut regions = Vec::with_capacity(sites_n);
    let mut addr = CODE_BASE;
    for (j, &len) in lens.iter().enumerate() {
        let body = match &body_pick {
            Some(pick) => (0..len).map(|_| body_template(&mut rng, &classes, pick)).collect(),
            None => Vec::new(),
        };
        let fall_addr = addr;
        addr += 4 * len as u64;
        let src = match kinds[j] {
            SiteKind::Uncond => Vec::new(),
            _ => vec![reg(&mut rng)],
        };
        sites.push(Site { kind: kinds[j], pc: addr, src });
        addr += 4;
        regions.push(Region { body, fall_addr, taken_addr: 0 });
    }
    let mut taken_addr = (addr + 0xffff) & !0xffff;
    for r in &mut regions {
        r.taken_addr = taken_addr;
        taken_addr += 4 * r.body.len() as u64;
    }
    // Where each arm of a site's branch lands: the start of the next region,
    // or the next site itself when that region is empty.
    let entry = |j: usize, taken: bool| -> u64 {
        let r = &regions[j];
        if r.body.is_empty() {
            sites[j].pc
        } else if taken {
            r.taken_addr
        } else {
            r.fall_addr
        }
    };

    let mut out = Vec::with_capacity(n as usize);
    let mut site = 0usize;
    let mut pos = 0usize;
    let mut via_taken = false;
    while (out.len() as u64) < n {
        let seq = out.len() as u64;
        let region = &regions[site];
        if pos < region.body.len() {
            let t = &region.body[pos];
            let base = if via_taken { region.taken_addr } else { region.fall_addr };
            let pc = base + 4 * pos as u64;
            let next = if pos + 1 < region.body.len() { pc + 4 } else { sites[site].pc };
            out.push(TraceRecord::simple(seq, pc, t.op, &t.dst, &t.src, next));
            pos += 1;
        } else {
            let s = &sites[site];
            let next_site = (site + 1) % sites_n;
            let (op, taken) = match s.kind {
                SiteKind::Uncond => (OpClass::BranchUncond, true),
                SiteKind::Hard => (OpClass::BranchCond, rng.gen_bool(0.5)),
                SiteKind::Biased => (OpClass::BranchCond, rng.gen_bool(spec.biased_taken_probability)),
            };
            out.push(TraceRecord {
                seq,
                pc: s.pc,
                op,
                dst_regs: Vec::new(),
                src_regs: s.src.clone(),
                taken,
                target_pc: entry(next_site, true),
                fallthrough_pc: entry(next_site, false),
            });
            site = next_site;
            pos = 0;
            via_taken = taken;
        }
    }
    Ok(out)
}
