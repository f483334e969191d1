//! Branch confidence estimation with 4-bit saturating counters.
//!
//! A counter tracks how trustworthy the direction prediction for a branch
//! is. Values `0..8` are low confidence, `8..=15` high. A correct prediction
//! jumps a low counter straight to 8 and increments a high one; a wrong
//! prediction increments a low counter and drops a high one to 7.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{check_pow2, PredictorError};

const MAX: u8 = 15;
const HIGH_THRESHOLD: u8 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfidenceCounter(u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceClass {
    High,
    Low,
}

impl ConfidenceCounter {
    /// Clamps to the 4-bit range.
    pub fn new(value: u8) -> Self {
        ConfidenceCounter(value.min(MAX))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn update(self, prediction_correct: bool) -> Self {
        let v = self.0;
        let next = match (prediction_correct, v >= HIGH_THRESHOLD) {
            (true, false) => HIGH_THRESHOLD,
            (true, true) => (v + 1).min(MAX),
            (false, false) => v + 1,
            (false, true) => HIGH_THRESHOLD - 1,
        };
        ConfidenceCounter(next)
    }

    pub fn classify(self) -> ConfidenceClass {
        if self.0 >= HIGH_THRESHOLD {
            ConfidenceClass::High
        } else {
            ConfidenceClass::Low
        }
    }

    pub fn probability<F: Float>(self) -> F {
        counter_to_probability(self)
    }
}

/// Linear map from counter value to the probability that the prediction is
/// right: 0 is a coin flip, 15 is certainty.
pub fn counter_to_probability<F: Float>(c: ConfidenceCounter) -> F {
    let half = F::from(0.5).unwrap();
    let v = F::from(c.0).unwrap();
    let max = F::from(MAX).unwrap();
    half + half * (v / max)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub entries: usize,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig { entries: 8_192 }
    }
}

/// Untagged, pc-indexed table of confidence counters.
#[derive(Clone, Debug)]
pub struct ConfidenceTable {
    counters: Vec<ConfidenceCounter>,
}

impl ConfidenceTable {
    pub fn new(cfg: &ConfidenceConfig) -> Result<Self, PredictorError> {
        check_pow2("confidence entries", cfg.entries)?;
        Ok(ConfidenceTable { counters: vec![ConfidenceCounter::default(); cfg.entries] })
    }

    pub fn index(&self, pc: u64) -> usize {
        (pc >> 2) as usize & (self.counters.len() - 1)
    }

    pub fn get(&self, pc: u64) -> ConfidenceCounter {
        self.counters[self.index(pc)]
    }

    pub fn update(&mut self, pc: u64, prediction_correct: bool) {
        let i = self.index(pc);
        self.counters[i] = self.counters[i].update(prediction_correct);
    }
}

/// Confidence class against prediction outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub hi_correct: u64,
    pub hi_wrong: u64,
    pub lo_correct: u64,
    pub lo_wrong: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, class: ConfidenceClass, correct: bool) {
        let cell = match (class, correct) {
            (ConfidenceClass::High, true) => &mut self.hi_correct,
            (ConfidenceClass::High, false) => &mut self.hi_wrong,
            (ConfidenceClass::Low, true) => &mut self.lo_correct,
            (ConfidenceClass::Low, false) => &mut self.lo_wrong,
        };
        *cell += 1;
    }

    pub fn total(&self) -> u64 {
        self.hi_correct + self.hi_wrong + self.lo_correct + self.lo_wrong
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upd(v: u8, correct: bool) -> u8 {
        ConfidenceCounter::new(v).update(correct).value()
    }

    #[test]
    fn update_examples() {
        assert_eq!(upd(5, true), 8);
        assert_eq!(upd(12, false), 7);
        assert_eq!(upd(3, false), 4);
        assert_eq!(upd(15, true), 15);
        assert_eq!(upd(7, false), 8);
    }

    #[test]
    fn classification_threshold() {
        assert_eq!(ConfidenceCounter::new(7).classify(), ConfidenceClass::Low);
        assert_eq!(ConfidenceCounter::new(8).classify(), ConfidenceClass::High);
        assert_eq!(ConfidenceCounter::new(0).classify(), ConfidenceClass::Low);
    }

    #[test]
    fn probability_examples() {
        assert_eq!(counter_to_probability::<f64>(ConfidenceCounter::new(0)), 0.5);
        assert_eq!(counter_to_probability::<f64>(ConfidenceCounter::new(15)), 1.0);
        assert!((counter_to_probability::<f64>(ConfidenceCounter::new(9)) - 0.8).abs() < 1e-15);
        assert!((counter_to_probability::<f32>(ConfidenceCounter::new(9)) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn probability_monotone_and_bounded() {
        let ps: Vec<f64> = (0..=15).map(|v| counter_to_probability(ConfidenceCounter::new(v))).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        assert!(ps.iter().all(|p| (0.5..=1.0).contains(p)));
    }

    #[test]
    fn table_indexing() {
        let mut t = ConfidenceTable::new(&ConfidenceConfig::default()).unwrap();
        t.update(0x1000, true);
        assert_eq!(t.get(0x1000).value(), 8);
        assert_eq!(t.get(0x1000 + (8_192 << 2)).value(), 8);
        assert_eq!(t.get(0x1004).value(), 0);
        assert!(ConfidenceTable::new(&ConfidenceConfig { entries: 8_132 }).is_err());
    }

    #[test]
    fn matrix_cells() {
        let mut m = ConfusionMatrix::default();
        m.record(ConfidenceClass::High, true);
        assert_eq!(m, ConfusionMatrix { hi_correct: 1, ..Default::default() });
        m.record(ConfidenceClass::Low, false);
        assert_eq!(m.lo_wrong, 1);
        assert_eq!(m.hi_wrong + m.lo_correct, 0);
    }

    proptest! {
        #[test]
        fn matrix_counts_every_call(calls in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..500)) {
            let mut m = ConfusionMatrix::default();
            for &(hi, ok) in &calls {
                m.record(if hi { ConfidenceClass::High } else { ConfidenceClass::Low }, ok);
            }
            prop_assert_eq!(m.total(), calls.len() as u64);
        }

        #[test]
        fn counter_stays_in_range(v in 0u8..=15, seq in proptest::collection::vec(any::<bool>(), 0..100)) {
            let mut c = ConfidenceCounter::new(v);
            for ok in seq {
                c = c.update(ok);
                prop_assert!(c.value() <= 15);
            }
        }
    }
}
