//! Gshare: global history XOR pc indexing a table of 2-bit counters.

use serde::{Deserialize, Serialize};

use super::{check_pow2, PredictorError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GshareConfig {
    pub entries: usize,
    pub history_bits: u32,
}

impl Default for GshareConfig {
    fn default() -> Self {
        GshareConfig { entries: 16_384, history_bits: 16 }
    }
}

#[derive(Clone, Debug)]
pub struct Gshare {
    table: Vec<u8>,
    history: u64,
    history_mask: u64,
}

impl Gshare {
    /// All counters start strongly not-taken, history cleared.
    pub fn new(cfg: &GshareConfig) -> Result<Self, PredictorError> {
        check_pow2("gshare entries", cfg.entries)?;
        if cfg.history_bits > 63 {
            return Err(PredictorError::HistoryTooLong(cfg.history_bits));
        }
        Ok(Gshare { table: vec![0; cfg.entries], history: 0, history_mask: (1u64 << cfg.history_bits) - 1 })
    }

    pub fn index(&self, pc: u64) -> usize {
        ((pc >> 2) ^ self.history) as usize & (self.table.len() - 1)
    }

    /// Index for `pc` under an explicit history, such as a path's
    /// speculative one.
    pub fn index_with(&self, pc: u64, history: u64) -> usize {
        ((pc >> 2) ^ (history & self.history_mask)) as usize & (self.table.len() - 1)
    }

    pub fn predict(&self, pc: u64) -> bool {
        self.predict_at(self.index(pc))
    }

    pub fn predict_at(&self, index: usize) -> bool {
        self.table[index] >= 2
    }

    /// Trains the counter `pc` currently indexes, then shifts the outcome into
    /// the history.
    pub fn update(&mut self, pc: u64, taken: bool) {
        self.update_at(self.index(pc), taken);
        self.push_history(taken);
    }

    /// Trains the counter at an index captured earlier (at prediction time).
    pub fn update_at(&mut self, index: usize, taken: bool) {
        let c = &mut self.table[index];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
    }

    pub fn push_history(&mut self, taken: bool) {
        self.history = ((self.history << 1) | u64::from(taken)) & self.history_mask;
    }

    pub fn history(&self) -> u64 {
        self.history
    }

    pub fn counter(&self, index: usize) -> u8 {
        self.table[index]
    }

    #[cfg(test)]
    pub(crate) fn set_history(&mut self, h: u64) {
        self.history = h & self.history_mask;
    }

    #[cfg(test)]
    pub(crate) fn set_counter(&mut self, index: usize, v: u8) {
        self.table[index] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fresh() -> Gshare {
        Gshare::new(&GshareConfig::default()).unwrap()
    }

    #[test]
    fn fresh_predicts_not_taken() {
        let g = fresh();
        for pc in [0u64, 0x1000, 0xdead_beef, u64::MAX] {
            assert!(!g.predict(pc));
        }
    }

    #[test]
    fn two_taken_updates_flip_prediction() {
        let mut g = fresh();
        let pc = 0x4000;
        let idx = g.index(pc);
        g.update_at(idx, true);
        assert!(!g.predict_at(idx));
        g.update_at(idx, true);
        assert_eq!(g.counter(idx), 2);
        assert!(g.predict_at(idx));
    }

    #[test]
    fn explicit_history_matches_internal() {
        let mut g = fresh();
        for t in [true, false, true, true] {
            g.push_history(t);
        }
        assert_eq!(g.index_with(0x1234, g.history()), g.index(0x1234));
        assert_eq!(g.index_with(0x1234, g.history() | 1 << 40), g.index(0x1234));
    }

    #[test]
    fn aliasing_pcs_share_a_counter() {
        let mut g = fresh();
        // Same low 14 bits after the shift.
        let a = 0x0000_1230u64;
        let b = a + (16_384 << 2);
        assert_eq!(g.index(a), g.index(b));
        g.update_at(g.index(a), true);
        g.update_at(g.index(a), true);
        assert!(g.predict(b));
    }

    #[test]
    fn saturation() {
        let mut g = fresh();
        g.set_counter(7, 3);
        g.update_at(7, true);
        assert_eq!(g.counter(7), 3);
        g.set_counter(7, 0);
        g.update_at(7, false);
        assert_eq!(g.counter(7), 0);
    }

    #[test]
    fn history_shift() {
        let mut g = fresh();
        g.set_history(0xffff);
        g.update(0x1000, false);
        assert_eq!(g.history(), 0xfffe);
        g.update(0x1000, true);
        assert_eq!(g.history(), 0xfffd);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Gshare::new(&GshareConfig { entries: 3000, history_bits: 8 }).is_err());
        assert!(Gshare::new(&GshareConfig { entries: 2048, history_bits: 64 }).is_err());
    }

    /// Reference 4-state machine: 0,1 predict not-taken; 2,3 predict taken.
    #[derive(Clone, Copy)]
    enum Fsm {
        StrongNot,
        WeakNot,
        WeakTaken,
        StrongTaken,
    }

    impl Fsm {
        fn step(self, taken: bool) -> Fsm {
            use Fsm::*;
            match (self, taken) {
                (StrongNot, false) => StrongNot,
                (StrongNot, true) => WeakNot,
                (WeakNot, false) => StrongNot,
                (WeakNot, true) => WeakTaken,
                (WeakTaken, false) => WeakNot,
                (WeakTaken, true) => StrongTaken,
                (StrongTaken, false) => WeakTaken,
                (StrongTaken, true) => StrongTaken,
            }
        }

        fn taken(self) -> bool {
            matches!(self, Fsm::WeakTaken | Fsm::StrongTaken)
        }
    }

    proptest! {
        #[test]
        fn entry_bisimilar_to_fsm(outcomes in proptest::collection::vec(any::<bool>(), 10_000)) {
            let mut g = Gshare::new(&GshareConfig { entries: 16, history_bits: 4 }).unwrap();
            let mut fsm = Fsm::StrongNot;
            for t in outcomes {
                prop_assert_eq!(g.predict_at(5), fsm.taken());
                g.update_at(5, t);
                fsm = fsm.step(t);
            }
        }
    }
}
