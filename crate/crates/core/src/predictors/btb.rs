//! Set-associative branch target buffer with per-set LRU replacement.

use serde::{Deserialize, Serialize};

use super::{check_pow2, PredictorError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BtbConfig {
    pub sets: usize,
    pub ways: usize,
}

impl Default for BtbConfig {
    fn default() -> Self {
        BtbConfig { sets: 8_192, ways: 16 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Way {
    pc: u64,
    target: u64,
    last_use: u64,
}

#[derive(Clone, Debug)]
pub struct Btb {
    sets: Vec<Vec<Way>>,
    ways: usize,
    clock: u64,
}

impl Btb {
    pub fn new(cfg: &BtbConfig) -> Result<Self, PredictorError> {
        check_pow2("btb sets", cfg.sets)?;
        if cfg.ways == 0 {
            return Err(PredictorError::NotPowerOfTwo { what: "btb ways", value: 0 });
        }
        Ok(Btb { sets: vec![Vec::new(); cfg.sets], ways: cfg.ways, clock: 0 })
    }

    pub fn set_index(&self, pc: u64) -> usize {
        (pc >> 2) as usize & (self.sets.len() - 1)
    }

    /// Target for `pc`, refreshing its recency on a hit.
    pub fn lookup(&mut self, pc: u64) -> Option<u64> {
        self.clock += 1;
        let now = self.clock;
        let set = self.set_index(pc);
        self.sets[set].iter_mut().find(|w| w.pc == pc).map(|w| {
            w.last_use = now;
            w.target
        })
    }

    pub fn peek(&self, pc: u64) -> Option<u64> {
        self.sets[self.set_index(pc)].iter().find(|w| w.pc == pc).map(|w| w.target)
    }

    /// Installs or refreshes `pc`. Returns the pc evicted to make room, if any.
    pub fn insert(&mut self, pc: u64, target: u64) -> Option<u64> {
        self.clock += 1;
        let now = self.clock;
        let ways = self.ways;
        let set_idx = self.set_index(pc);
        let set = &mut self.sets[set_idx];
        if let Some(w) = set.iter_mut().find(|w| w.pc == pc) {
            w.target = target;
            w.last_use = now;
            return None;
        }
        let fresh = Way { pc, target, last_use: now };
        if set.len() < ways {
            set.push(fresh);
            return None;
        }
        let victim = set.iter_mut().min_by_key(|w| w.last_use).expect("full set is non-empty");
        let evicted = victim.pc;
        *victim = fresh;
        Some(evicted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_misses() {
        let mut b = Btb::new(&BtbConfig::default()).unwrap();
        assert_eq!(b.lookup(0x1000), None);
    }

    #[test]
    fn insert_then_hit() {
        let mut b = Btb::new(&BtbConfig::default()).unwrap();
        b.insert(0x1000, 0x2000);
        assert_eq!(b.lookup(0x1000), Some(0x2000));
        b.insert(0x1000, 0x3000);
        assert_eq!(b.peek(0x1000), Some(0x3000));
    }

    #[test]
    fn seventeenth_alias_evicts_exactly_one() {
        let cfg = BtbConfig::default();
        let mut b = Btb::new(&cfg).unwrap();
        let stride = (cfg.sets as u64) << 2;
        let pcs: Vec<u64> = (0..17).map(|i| 0x40 + i * stride).collect();
        assert!(pcs.iter().all(|&pc| b.set_index(pc) == b.set_index(pcs[0])));
        let mut evicted = Vec::new();
        for &pc in &pcs {
            evicted.extend(b.insert(pc, pc + 8));
        }
        assert_eq!(evicted, vec![pcs[0]]);
        let resident = pcs.iter().filter(|&&pc| b.peek(pc).is_some()).count();
        assert_eq!(resident, 16);
    }

    #[test]
    fn lru_spares_recently_used() {
        let mut b = Btb::new(&BtbConfig { sets: 1, ways: 2 }).unwrap();
        b.insert(0x0, 1);
        b.insert(0x4, 2);
        b.lookup(0x0);
        assert_eq!(b.insert(0x8, 3), Some(0x4));
        assert_eq!(b.peek(0x0), Some(1));
    }
}
