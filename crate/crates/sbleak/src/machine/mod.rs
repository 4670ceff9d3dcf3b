//! The simulated machine: page table, cache, store buffer, clock, registers,
//! and the active microcode profile.
//!
//! `MachineState` owns everything that changes while an attack program runs.
//! The page table is immutable once an experiment is set up and is shared
//! behind an `Arc`, so cloning a machine for an independent trial is cheap.

pub mod cache;
pub mod microcode;
pub mod page;
pub mod store_buffer;
pub mod timing;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub use cache::{line_base, Cache, LineState, LINE_SIZE};
pub use microcode::{
    builtin_profiles, profile_by_revision, revision_hex, vulnerable_revisions, McDate,
    MicrocodeProfile,
};
pub use page::{page_base, page_offset, AccessOutcome, PageMapping, PageTable, PAGE_SIZE};
pub use store_buffer::{PrepOp, StoreBuffer, StoreBufferEntry, MAX_STORE_SIZE};
pub use timing::TimingModel;

/// Errors from machine-level operations.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("page address {0:#x} is not 4096-byte aligned")]
    UnalignedPage(u64),
    #[error("protection key {0} out of range (0..=15)")]
    ProtectionKeyRange(u8),
    #[error("store of {size} bytes at {vaddr:#x} would straddle a cache line")]
    StoreSplitUnsupported { vaddr: u64, size: u8 },
    #[error("store size {0} outside 1..=8")]
    BadStoreSize(u8),
    #[error("timing model violates required orderings: {0}")]
    InvalidTiming(String),
}

/// Number of general-purpose registers (`r0`..`r15`).
pub const NUM_REGS: usize = 16;

/// Full mutable state of one simulated core.
#[derive(Debug, Clone)]
pub struct MachineState {
    /// Address translation; fixed for the lifetime of an experiment.
    pub table: Arc<PageTable>,
    pub cache: Cache,
    pub store_buffer: StoreBuffer,
    /// Byte-granular memory; absent addresses read as zero.
    pub memory: HashMap<u64, u8>,
    pub regs: [u64; NUM_REGS],
    /// Current cycle.
    pub clock: u64,
    pub microcode: MicrocodeProfile,
    pub timing: TimingModel,
}

impl MachineState {
    pub fn new(table: PageTable, microcode: MicrocodeProfile, timing: TimingModel) -> Self {
        MachineState {
            table: Arc::new(table),
            cache: Cache::new(),
            store_buffer: StoreBuffer::new(),
            memory: HashMap::new(),
            regs: [0; NUM_REGS],
            clock: 0,
            microcode,
            timing,
        }
    }

    /// Reads `size` bytes at `vaddr` as a little-endian value; unwritten
    /// bytes are zero.
    pub fn read_memory(&self, vaddr: u64, size: u8) -> u64 {
        let mut v = 0u64;
        for i in (0..size as u64).rev() {
            v = (v << 8) | self.memory.get(&(vaddr + i)).copied().unwrap_or(0) as u64;
        }
        v
    }

    /// Moves drained store-buffer entries into memory and marks their lines
    /// dirty. Called whenever the clock has advanced past drain deadlines.
    pub fn commit_drained_stores(&mut self) {
        for entry in self.store_buffer.pop_drained(self.clock) {
            for (i, b) in entry.bytes().iter().enumerate() {
                self.memory.insert(entry.full_vaddr + i as u64, *b);
            }
            self.cache.touch_write(entry.full_vaddr);
        }
    }

    /// Resets the mutable state back to "experiment start": cycle zero, empty
    /// store buffer and memory, cleared registers, and a cache containing
    /// exactly the given pre-warmed lines. The page table is untouched.
    pub fn reset(&mut self, warm_lines: &[u64]) {
        self.clock = 0;
        self.regs = [0; NUM_REGS];
        self.store_buffer.clear();
        self.memory.clear();
        self.cache = Cache::new();
        for &line in warm_lines {
            self.cache.touch_read(line);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine() -> MachineState {
        let mut t = PageTable::new();
        t.map(PageMapping::user_data(0x1000)).unwrap();
        MachineState::new(t, *profile_by_revision(0x32).unwrap(), TimingModel::default())
    }

    #[test]
    fn test_memory_reads_little_endian_with_zero_default() {
        let mut m = machine();
        m.memory.insert(0x1000, 0x11);
        m.memory.insert(0x1001, 0x22);
        assert_eq!(m.read_memory(0x1000, 2), 0x2211);
        assert_eq!(m.read_memory(0x1000, 4), 0x0000_2211);
        assert_eq!(m.read_memory(0x2000, 8), 0);
    }

    #[test]
    fn test_commit_moves_drained_entries_to_memory() {
        let mut m = machine();
        m.store_buffer
            .insert(0x1123, &[0xaa, 0xbb], 0, LineState::Exclusive, PrepOp::None, &m.timing.clone())
            .unwrap();
        m.clock = 2;
        m.commit_drained_stores();
        assert_eq!(m.store_buffer.len(), 1, "still live before drain_at");
        assert_eq!(m.read_memory(0x1123, 2), 0);

        m.clock = 5;
        m.commit_drained_stores();
        assert!(m.store_buffer.is_empty());
        assert_eq!(m.read_memory(0x1123, 2), 0xbbaa);
        assert_eq!(m.cache.state(0x1123), LineState::Modified);
    }

    #[test]
    fn test_reset_restores_warm_lines_only() {
        let mut m = machine();
        m.clock = 999;
        m.regs[3] = 7;
        m.memory.insert(0x1000, 1);
        m.cache.touch_write(0x5000);
        m.store_buffer
            .insert(0x1123, &[1], 999, LineState::Exclusive, PrepOp::None, &m.timing.clone())
            .unwrap();
        m.reset(&[0x1100]);
        assert_eq!(m.clock, 0);
        assert_eq!(m.regs, [0; NUM_REGS]);
        assert!(m.memory.is_empty());
        assert!(m.store_buffer.is_empty());
        assert_eq!(m.cache.state(0x5000), LineState::Invalid);
        assert_eq!(m.cache.state(0x1100), LineState::Exclusive);
    }
}
