//! Store buffer: pending stores awaiting commit.
//!
//! Committed program stores sit in this buffer until they drain to the cache.
//! While an entry is live (current cycle < `drain_at`) it can service
//! store-to-load forwarding. The architectural forwarding path matches full
//! virtual addresses; the *leaky* path used during a faulting load matches
//! only the low 12 bits (`lookup_alias`), which is what lets a load to a
//! completely different page pick up stale store data.

use crate::machine::cache::line_base;
use crate::machine::page::page_offset;
use crate::machine::timing::TimingModel;
use crate::machine::{LineState, MachineError};

/// Maximum store width in bytes.
pub const MAX_STORE_SIZE: u8 = 8;

/// How the store's target line was prepared before/around the store. The
/// variant chosen decides how long the store stays buffered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepOp {
    /// No preparation: the line is (usually) cached and the store drains fast.
    None,
    /// The line is flushed; commit must refetch it first.
    Clflush,
    /// A locked read-modify-write targets the line; commit waits longest.
    LockInc,
}

impl PrepOp {
    pub const ALL: [PrepOp; 3] = [PrepOp::None, PrepOp::Clflush, PrepOp::LockInc];
}

impl std::fmt::Display for PrepOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PrepOp::None => "none",
            PrepOp::Clflush => "clflush",
            PrepOp::LockInc => "lockinc",
        };
        f.write_str(s)
    }
}

/// One buffered store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreBufferEntry {
    /// Full virtual address of the first byte.
    pub full_vaddr: u64,
    /// `full_vaddr` modulo 4096; the only address bits the alias lookup sees.
    pub page_offset: u16,
    /// Stored bytes (`size` of them are valid).
    data: [u8; MAX_STORE_SIZE as usize],
    /// Store width in bytes, 1..=8.
    pub size: u8,
    /// Cycle the entry was inserted.
    pub inserted_at: u64,
    /// First cycle at which the entry is no longer visible to forwarding.
    pub drain_at: u64,
}

impl StoreBufferEntry {
    /// The stored bytes.
    pub fn bytes(&self) -> &[u8] {
        &self.data[..self.size as usize]
    }

    /// Whether the entry can still service forwarding at cycle `now`.
    pub fn is_live(&self, now: u64) -> bool {
        now < self.drain_at
    }

    /// Whether `[offset, offset + size)` lies fully inside this entry's
    /// page-offset byte range.
    pub fn covers_offset(&self, offset: u16, size: u8) -> bool {
        let start = self.page_offset as u32;
        let end = start + self.size as u32;
        let q_start = offset as u32;
        let q_end = q_start + size as u32;
        start <= q_start && q_end <= end
    }

    /// Like `covers_offset` but on full virtual addresses.
    pub fn covers_vaddr(&self, vaddr: u64, size: u8) -> bool {
        let end = self.full_vaddr + self.size as u64;
        vaddr >= self.full_vaddr && vaddr + size as u64 <= end
    }

    /// The stored bytes that back `[offset, offset + size)`, assuming
    /// `covers_offset` holds.
    pub fn bytes_at_offset(&self, offset: u16, size: u8) -> &[u8] {
        let skip = (offset - self.page_offset) as usize;
        &self.bytes()[skip..skip + size as usize]
    }
}

/// FIFO of pending stores, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreBuffer {
    entries: Vec<StoreBufferEntry>,
}

impl StoreBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Buffers a store of `data` at `vaddr` performed at cycle `now`.
    ///
    /// The drain deadline depends on how the target line is being treated:
    /// a locked RMW pins the entry for `drain_locked` cycles; a flushed
    /// (Invalid) line forces a refetch costing `drain_flushed`; otherwise the
    /// store drains after `drain_cached`. Stores that would straddle a cache
    /// line are rejected — the model only supports line-contained stores.
    pub fn insert(
        &mut self,
        vaddr: u64,
        data: &[u8],
        now: u64,
        line_state: LineState,
        prep: PrepOp,
        tm: &TimingModel,
    ) -> Result<(), MachineError> {
        let size = data.len() as u8;
        if size == 0 || size > MAX_STORE_SIZE {
            return Err(MachineError::BadStoreSize(size));
        }
        if line_base(vaddr) != line_base(vaddr + size as u64 - 1) {
            return Err(MachineError::StoreSplitUnsupported { vaddr, size });
        }
        let residency = match (prep, line_state) {
            (PrepOp::LockInc, _) => tm.drain_locked,
            (PrepOp::Clflush, _) | (_, LineState::Invalid) => tm.drain_flushed,
            _ => tm.drain_cached,
        };
        let mut buf = [0u8; MAX_STORE_SIZE as usize];
        buf[..data.len()].copy_from_slice(data);
        self.entries.push(StoreBufferEntry {
            full_vaddr: vaddr,
            page_offset: page_offset(vaddr),
            data: buf,
            size,
            inserted_at: now,
            drain_at: now + residency,
        });
        Ok(())
    }

    /// 4 KiB-alias lookup: the youngest live entry whose page-offset range
    /// fully contains `[offset, offset + size)`. This deliberately ignores
    /// everything above bit 11 — it is the leaky match a faulting load uses.
    pub fn lookup_alias(&self, offset: u16, size: u8, now: u64) -> Option<&StoreBufferEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.is_live(now) && e.covers_offset(offset, size))
    }

    /// Architectural lookup: the youngest live entry containing the full
    /// virtual address range.
    pub fn lookup_exact(&self, vaddr: u64, size: u8, now: u64) -> Option<&StoreBufferEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.is_live(now) && e.covers_vaddr(vaddr, size))
    }

    /// Removes and returns every entry whose drain deadline has passed,
    /// oldest first, so the caller can commit them to memory.
    pub fn pop_drained(&mut self, now: u64) -> Vec<StoreBufferEntry> {
        let (drained, kept): (Vec<_>, Vec<_>) =
            self.entries.drain(..).partition(|e| !e.is_live(now));
        self.entries = kept;
        drained
    }

    /// Latest drain deadline among live entries, if any (what a fence waits
    /// for).
    pub fn latest_drain(&self, now: u64) -> Option<u64> {
        self.entries
            .iter()
            .filter(|e| e.is_live(now))
            .map(|e| e.drain_at)
            .max()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> &[StoreBufferEntry] {
        &self.entries
    }
}
