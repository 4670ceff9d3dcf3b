//! Data-cache line states.
//!
//! Only the coherence state of each 64-byte line is tracked, because that is
//! all the leak depends on: flushed (Invalid) lines slow down store commit,
//! and the covert channel distinguishes cached from uncached probe lines.
//! Untracked lines are Invalid.

use std::collections::HashMap;

/// Cache line size in bytes.
pub const LINE_SIZE: u64 = 64;

/// Returns the line base (64-byte aligned) of an address.
pub fn line_base(addr: u64) -> u64 {
    addr & !(LINE_SIZE - 1)
}

/// MESI coherence state of one line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineState {
    Invalid,
    Shared,
    Exclusive,
    Modified,
}

/// Tracked cache lines: line base -> state. Absent lines are `Invalid`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cache {
    lines: HashMap<u64, LineState>,
}

impl Cache {
    pub fn new() -> Self {
        Self::default()
    }

    /// State of the line containing `addr` (`Invalid` when untracked).
    pub fn state(&self, addr: u64) -> LineState {
        self.lines
            .get(&line_base(addr))
            .copied()
            .unwrap_or(LineState::Invalid)
    }

    /// Evicts the line containing `addr` (clflush). Idempotent.
    pub fn flush(&mut self, addr: u64) {
        self.lines.remove(&line_base(addr));
    }

    /// Evicts every tracked line whose base lies in `[start, end)`. Cost is
    /// proportional to the number of *tracked* lines, so sweeping a large
    /// probe region between attempts stays cheap.
    pub fn flush_range(&mut self, start: u64, end: u64) {
        self.lines.retain(|&base, _| base < start || base >= end);
    }

    /// A read brings an Invalid line in as Exclusive; other states are kept.
    pub fn touch_read(&mut self, addr: u64) {
        self.lines
            .entry(line_base(addr))
            .or_insert(LineState::Exclusive);
    }

    /// A write leaves the line Modified regardless of its previous state.
    pub fn touch_write(&mut self, addr: u64) {
        self.lines.insert(line_base(addr), LineState::Modified);
    }

    /// Forces a specific state; `Invalid` untracks the line. Used by tests and
    /// experiment setup to stage cache contents.
    pub fn set_state(&mut self, addr: u64, state: LineState) {
        match state {
            LineState::Invalid => self.flush(addr),
            s => {
                self.lines.insert(line_base(addr), s);
            }
        }
    }

    /// Number of tracked (non-Invalid) lines.
    pub fn tracked(&self) -> usize {
        self.lines.len()
    }
}
