//! Flush+Reload covert channel.
//!
//! The transmitting side (the transient encode) caches exactly one slot of a
//! 256-slot probe array; the receiving side measures the reload latency of
//! every slot and decodes the byte as the index that loaded fast. Timing
//! measurements come from a seeded Gaussian oracle, the only stochastic part
//! of an attempt, so every experiment is reproducible from its seed.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{Cache, LineState};
use crate::rng::stream_rng;

/// Slots in the probe array — one per byte value.
pub const PROBE_SLOTS: usize = 256;

/// Covert-channel errors.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("probe stride {0} smaller than a cache line (64)")]
    StrideTooSmall(u64),
    #[error("no samples to calibrate from")]
    EmptySamples,
    #[error("hit and miss samples overlap after trimming; cannot calibrate")]
    DegenerateCalibration,
    #[error("oracle means too close: miss - hit must exceed 4 sigma")]
    DegenerateOracle,
}

/// Tunable parameters of the measurement side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Mean reload latency of a cached slot, cycles.
    pub hit_mean: f64,
    /// Mean reload latency of an uncached slot, cycles.
    pub miss_mean: f64,
    /// Gaussian noise applied to both.
    pub noise_sigma: f64,
    /// Distance between consecutive probe slots in bytes.
    pub stride: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { hit_mean: 40.0, miss_mean: 300.0, noise_sigma: 10.0, stride: 4096 }
    }
}

impl ChannelParams {
    /// The separation requirement that makes decoding reliable: means at
    /// least 4 sigma apart, and a stride of at least one cache line.
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.stride < 64 {
            return Err(ChannelError::StrideTooSmall(self.stride));
        }
        if !(self.miss_mean - self.hit_mean > 4.0 * self.noise_sigma) {
            return Err(ChannelError::DegenerateOracle);
        }
        Ok(())
    }
}

/// The receiver's view of the probe array: 256 slots starting at `base`,
/// `stride` bytes apart, each slot on its own cache line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeArray {
    base: u64,
    stride: u64,
}

impl ProbeArray {
    pub fn new(base: u64, stride: u64) -> Result<Self, ChannelError> {
        if stride < 64 {
            return Err(ChannelError::StrideTooSmall(stride));
        }
        Ok(ProbeArray { base, stride })
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    /// Address of slot `index`.
    pub fn slot_addr(&self, index: u8) -> u64 {
        self.base + index as u64 * self.stride
    }

    /// End of the address span covered by the array (exclusive).
    pub fn span_end(&self) -> u64 {
        self.base + PROBE_SLOTS as u64 * self.stride
    }
}

/// Seeded Gaussian latency source.
#[derive(Debug, Clone)]
pub struct TimingOracle {
    hit: Normal<f64>,
    miss: Normal<f64>,
    rng: ChaCha8Rng,
}

impl TimingOracle {
    /// Builds an oracle for `params`, drawing from the sub-stream `seed`.
    pub fn new(params: &ChannelParams, seed: u64) -> Result<Self, ChannelError> {
        params.validate()?;
        let hit = Normal::new(params.hit_mean, params.noise_sigma)
            .map_err(|_| ChannelError::DegenerateOracle)?;
        let miss = Normal::new(params.miss_mean, params.noise_sigma)
            .map_err(|_| ChannelError::DegenerateOracle)?;
        Ok(TimingOracle { hit, miss, rng: stream_rng(seed, 0xC1A5) })
    }

    fn draw(&mut self, dist: Normal<f64>) -> f64 {
        // Latencies below one cycle are physically meaningless; truncate.
        dist.sample(&mut self.rng).max(1.0)
    }

    /// One reload measurement of a slot whose line is in `state`.
    pub fn measure(&mut self, state: LineState) -> f64 {
        match state {
            LineState::Invalid => self.draw(self.miss),
            _ => self.draw(self.hit),
        }
    }

    /// `n` measurements of a known-cached line (calibration material).
    pub fn sample_hits(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(self.hit)).collect()
    }

    /// `n` measurements of a known-uncached line.
    pub fn sample_misses(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(self.miss)).collect()
    }
}

/// Reloads every probe slot once and returns the 256 measured latencies,
/// indexed by slot.
pub fn measure_reload(array: &ProbeArray, cache: &Cache, oracle: &mut TimingOracle) -> Vec<f64> {
    (0..PROBE_SLOTS)
        .map(|i| oracle.measure(cache.state(array.slot_addr(i as u8))))
        .collect()
}

/// Derives a hit/miss decision threshold from calibration samples.
///
/// Both sample sets are sorted and their adversarial 1% tails dropped (the
/// slowest hits, the fastest misses); the threshold is the midpoint between
/// the largest surviving hit and the smallest surviving miss. Fails when
/// either set is empty or when the trimmed ranges still overlap.
pub fn calibrate_threshold(hits: &[f64], misses: &[f64]) -> Result<f64, ChannelError> {
    if hits.is_empty() || misses.is_empty() {
        return Err(ChannelError::EmptySamples);
    }
    let trim = |samples: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = samples.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let drop_n = |len: usize| len / 100;

    let hits_sorted = trim(hits);
    let misses_sorted = trim(misses);
    let hi_hit = hits_sorted[hits_sorted.len() - 1 - drop_n(hits_sorted.len())];
    let lo_miss = misses_sorted[drop_n(misses_sorted.len())];
    if hi_hit >= lo_miss {
        return Err(ChannelError::DegenerateCalibration);
    }
    Ok((hi_hit + lo_miss) / 2.0)
}

/// A decoded byte and whether competing slots were also below threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedByte {
    pub value: u8,
    /// True when more than one slot measured below threshold; the reported
    /// value is then the fastest slot.
    pub ambiguous: bool,
}

/// Decodes one byte from 256 reload latencies: the slot below `threshold`.
/// No slot below threshold decodes to `None`; several decode to the fastest
/// one, flagged ambiguous (ties broken toward the smaller index).
pub fn decode_byte(latencies: &[f64], threshold: f64) -> Option<DecodedByte> {
    debug_assert_eq!(latencies.len(), PROBE_SLOTS);
    let mut best: Option<(f64, usize)> = None;
    let mut below = 0usize;
    for (i, &lat) in latencies.iter().enumerate() {
        if lat < threshold {
            below += 1;
            if best.map_or(true, |(b, _)| lat < b) {
                best = Some((lat, i));
            }
        }
    }
    best.map(|(_, i)| DecodedByte { value: i as u8, ambiguous: below > 1 })
}
