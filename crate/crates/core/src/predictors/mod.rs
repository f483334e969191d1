//! Direction predictor, target buffer, perfect oracle and confidence estimator.

mod btb;
mod confidence;
mod gshare;

use thiserror::Error;

use crate::trace_model::{BranchOracle, OracleEntry};

pub use btb::{Btb, BtbConfig};
pub use confidence::{
    counter_to_probability, ConfidenceClass, ConfidenceConfig, ConfidenceCounter, ConfidenceTable, ConfusionMatrix,
};
pub use gshare::{Gshare, GshareConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredictorError {
    #[error("{what} must be a power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: usize },
    #[error("history length {0} exceeds 63 bits")]
    HistoryTooLong(u32),
    #[error("no recorded outcome for conditional branch at seq {0}")]
    UnknownBranch(u64),
}

pub(crate) fn check_pow2(what: &'static str, value: usize) -> Result<(), PredictorError> {
    if value.is_power_of_two() {
        Ok(())
    } else {
        Err(PredictorError::NotPowerOfTwo { what, value })
    }
}

/// Perfect prediction: the recorded outcome of the branch at `seq`.
pub fn oracle_predict(oracle: &BranchOracle, seq: u64) -> Result<OracleEntry, PredictorError> {
    oracle.get(seq).ok_or(PredictorError::UnknownBranch(seq))
}
