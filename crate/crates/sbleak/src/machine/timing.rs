//! Cycle-level timing parameters.
//!
//! All durations are in simulated CPU cycles; `nominal_frequency` converts
//! cycle counts into wall-clock seconds when reporting leak rates. The three
//! `drain_*` values are the heart of the model: they set how long a store
//! lingers in the store buffer depending on how its target line was prepared,
//! which in turn sets how wide the window for transient forwarding is.

use serde::{Deserialize, Serialize};

use crate::machine::MachineError;

/// Timing parameters for one simulated machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingModel {
    /// Latency of a load that hits in the cache.
    pub hit_latency: u64,
    /// Latency of a load that misses to memory.
    pub miss_latency: u64,
    /// Store-buffer residency when the target line is cached.
    pub drain_cached: u64,
    /// Store-buffer residency when the target line is flushed (Invalid); the
    /// commit has to refetch the line first.
    pub drain_flushed: u64,
    /// Store-buffer residency when a locked read-modify-write pins the line.
    pub drain_locked: u64,
    /// Cycles of speculative execution available after a faulting load.
    pub transient_window: u64,
    /// Simulated cycles per second, used to convert rates to bytes/s.
    pub nominal_frequency: u64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            hit_latency: 40,
            miss_latency: 300,
            drain_cached: 5,
            drain_flushed: 200,
            drain_locked: 300,
            transient_window: 100,
            nominal_frequency: 1_000_000_000,
        }
    }
}

impl TimingModel {
    /// Checks the orderings the simulation depends on:
    /// `drain_locked > drain_flushed > drain_cached > 0`, `miss > hit`, and a
    /// non-zero transient window and frequency.
    pub fn validate(&self) -> Result<(), MachineError> {
        let ok = self.drain_locked > self.drain_flushed
            && self.drain_flushed > self.drain_cached
            && self.drain_cached > 0
            && self.miss_latency > self.hit_latency
            && self.transient_window > 0
            && self.nominal_frequency > 0;
        if ok {
            Ok(())
        } else {
            Err(MachineError::InvalidTiming(format!("{self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_default_model_is_valid() {
        TimingModel::default().validate().unwrap();
        let tm = TimingModel::default();
        assert_eq!(tm.hit_latency, 40);
        assert_eq!(tm.miss_latency, 300);
        assert_eq!(tm.drain_cached, 5);
        assert_eq!(tm.drain_flushed, 200);
        assert_eq!(tm.drain_locked, 300);
        assert_eq!(tm.transient_window, 100);
        assert_eq!(tm.nominal_frequency, 1_000_000_000);
    }

    #[test]
    fn test_validate_rejects_reordered_drains() {
        let mut tm = TimingModel::default();
        tm.drain_flushed = tm.drain_locked;
        assert!(tm.validate().is_err());

        let mut tm = TimingModel::default();
        tm.drain_cached = 0;
        assert!(tm.validate().is_err());

        let mut tm = TimingModel::default();
        tm.miss_latency = tm.hit_latency;
        assert!(tm.validate().is_err());
    }
}
