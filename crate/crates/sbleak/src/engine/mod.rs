//! Transient-execution engine.
//!
//! Runs attack programs against a `MachineState` at cycle granularity. The
//! interesting moment is a faulting load: if a live store-buffer entry
//! 4K-aliases the load address and the microcode does not block it, the
//! entry's stale data is forwarded into the speculative shadow of the fault,
//! where a dependent `encode` can deposit it into the cache before everything
//! is squashed. Architectural state (registers, memory) is unaffected; the
//! cache footprint is not — that asymmetry is the whole leak.

pub mod experiment;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::channel::ChannelError;
use crate::dsl::{AddrExpr, AttackProgram, Instr};
use crate::machine::{
    line_base, page_offset, AccessOutcome, MachineError, MachineState, PrepOp, StoreBufferEntry,
    TimingModel,
};

pub use experiment::{
    ExperimentSetup, LeakageReport, MachineConfig, RecoveredByte, DEFAULT_BUDGET,
};

/// Cycles to issue a simple instruction (set, store, fence arming).
const ISSUE_COST: u64 = 1;

/// One in this many attempts issues its load back-to-back with the store,
/// fast enough to catch even a cached store's short residency window. The
/// rest issue after the fault-suppression re-arm delay.
pub const EARLY_ISSUE_DENOM: u32 = 1024;

/// Engine-level failures.
#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("symbol `{0}` is not bound to an address")]
    UnboundSymbol(String),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Run-time addresses for a program's symbols.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolBindings {
    /// Symbol name -> base virtual address (pages and probe bases alike).
    pub addrs: BTreeMap<String, u64>,
    /// Slot stride of probe arrays, bytes.
    pub probe_stride: u64,
}

impl SymbolBindings {
    /// Resolves `base + offset` to a concrete virtual address.
    pub fn resolve(&self, addr: &AddrExpr) -> Result<u64, EngineError> {
        self.addrs
            .get(&addr.base)
            .map(|b| b + addr.offset)
            .ok_or_else(|| EngineError::UnboundSymbol(addr.base.clone()))
    }
}

/// Everything observable about one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptResult {
    /// Fault taken by the attempt (`Ok` when it ran to completion).
    pub fault: AccessOutcome,
    /// Whether stale store data was forwarded to a faulting load.
    pub forwarded: bool,
    /// Probe slots touched by transient execution. Non-empty only when
    /// `forwarded` — a denied forward produces no transient side effects.
    pub transient_touches: BTreeSet<u8>,
    /// Architectural cycles the attempt consumed.
    pub cycles_consumed: u64,
}

/// The forwarding predicate: stale store-buffer data reaches a load iff the
/// load faulted with US or PK (not NP), some live entry aliases it, and the
/// microcode has not disabled forwarding to faulting loads. Pure — all
/// insight into "does this machine leak right now" funnels through here.
pub fn forward_decision(
    fault: AccessOutcome,
    alias_hit: bool,
    mitigated: bool,
    load_time: u64,
    entry: Option<&StoreBufferEntry>,
) -> bool {
    matches!(fault, AccessOutcome::FaultUS | AccessOutcome::FaultPK)
        && alias_hit
        && !mitigated
        && entry.is_some_and(|e| e.is_live(load_time))
}

/// Draws the issue delay between a program's store phase and its load. Most
/// attempts pay the fault-suppression re-arm cost, placing the load past the
/// cached-store window but (for default timing) inside the locked window;
/// rarely (1/[`EARLY_ISSUE_DENOM`]) the load issues almost immediately.
pub fn draw_issue_delay(rng: &mut impl Rng, tm: &TimingModel) -> u64 {
    if rng.gen_ratio(1, EARLY_ISSUE_DENOM) {
        rng.gen_range(0..=tm.drain_cached.saturating_sub(2))
    } else {
        let span = tm
            .drain_locked
            .saturating_sub(tm.hit_latency + ISSUE_COST + tm.drain_cached)
            .max(1);
        tm.drain_cached + rng.gen_range(0..span)
    }
}

/// Runs one attempt with no extra issue delay.
pub fn run_attempt(
    machine: &mut MachineState,
    program: &AttackProgram,
    binds: &SymbolBindings,
) -> Result<AttemptResult, EngineError> {
    run_attempt_delayed(machine, program, binds, 0)
}

/// Runs one attempt, stalling `issue_delay` cycles before the program's
/// first load issues. Deterministic: all randomness lives with the caller.
pub fn run_attempt_delayed(
    machine: &mut MachineState,
    program: &AttackProgram,
    binds: &SymbolBindings,
    issue_delay: u64,
) -> Result<AttemptResult, EngineError> {
    let start = machine.clock;
    let mut delay_pending = issue_delay;
    let mut result = AttemptResult {
        fault: AccessOutcome::Ok,
        forwarded: false,
        transient_touches: BTreeSet::new(),
        cycles_consumed: 0,
    };

    for (idx, instr) in program.instrs.iter().enumerate() {
        match instr {
            Instr::SetReg { reg, value } => {
                machine.regs[reg.index()] = *value;
                machine.clock += ISSUE_COST;
            }
            Instr::Store { addr, src, size } => {
                let vaddr = binds.resolve(addr)?;
                let outcome = machine.table.classify_access(vaddr, true);
                if outcome.is_fault() {
                    // A faulting store ends the attempt architecturally;
                    // stores never forward anything.
                    machine.clock += ISSUE_COST;
                    result.fault = outcome;
                    break;
                }
                let value = machine.regs[src.index()];
                let data = &value.to_le_bytes()[..*size as usize];
                let line_state = machine.cache.state(vaddr);
                let prep = upcoming_prep(program, idx, vaddr, binds);
                let tm = machine.timing;
                machine
                    .store_buffer
                    .insert(vaddr, data, machine.clock, line_state, prep, &tm)?;
                machine.clock += ISSUE_COST;
            }
            Instr::Flush { addr } => {
                let vaddr = binds.resolve(addr)?;
                machine.cache.flush(vaddr);
                machine.clock += machine.timing.hit_latency;
            }
            Instr::LockInc { addr } => {
                let vaddr = binds.resolve(addr)?;
                let outcome = machine.table.classify_access(vaddr, true);
                if outcome.is_fault() {
                    machine.clock += ISSUE_COST;
                    result.fault = outcome;
                    break;
                }
                // Locked RMW: fold the increment into committed memory and
                // dirty the line. Pending buffered stores to the address
                // still commit their own data afterwards.
                let v = machine.read_memory(vaddr, 1).wrapping_add(1) as u8;
                machine.memory.insert(vaddr, v);
                machine.cache.touch_write(vaddr);
                machine.clock += machine.timing.hit_latency;
            }
            Instr::Fence => {
                // Wait for every buffered store to drain.
                machine.clock += ISSUE_COST;
                if let Some(deadline) = machine.store_buffer.latest_drain(machine.clock) {
                    machine.clock = machine.clock.max(deadline);
                }
                machine.commit_drained_stores();
            }
            Instr::Load { dest, addr, size } => {
                // The attempt loop's scheduling delay lands on the first load.
                machine.clock += std::mem::take(&mut delay_pending);
                let vaddr = binds.resolve(addr)?;
                let outcome = machine.table.classify_access(vaddr, true);
                if outcome.is_fault() {
                    result.fault = outcome;
                    result.forwarded =
                        faulting_load(machine, program, binds, idx, vaddr, *size, outcome, &mut result.transient_touches)?;
                    break;
                }
                machine.commit_drained_stores();
                let tm = machine.timing;
                if let Some(entry) = machine.store_buffer.lookup_exact(vaddr, *size, machine.clock)
                {
                    // Architectural store-to-load forwarding: full-address
                    // match, correct data, hit-fast.
                    let bytes = entry.bytes_at_offset(page_offset(vaddr), *size);
                    machine.regs[dest.index()] = le_value(bytes);
                    machine.clock += tm.hit_latency;
                } else {
                    let cached = machine.cache.state(vaddr) != crate::machine::LineState::Invalid;
                    machine.regs[dest.index()] = machine.read_memory(vaddr, *size);
                    machine.clock += if cached { tm.hit_latency } else { tm.miss_latency };
                    machine.cache.touch_read(vaddr);
                }
            }
            Instr::Encode { probe, index } => {
                // Architectural encode: an ordinary load of the indexed slot.
                let base = binds
                    .addrs
                    .get(probe)
                    .copied()
                    .ok_or_else(|| EngineError::UnboundSymbol(probe.clone()))?;
                let slot = (machine.regs[index.index()] & 0xff) * binds.probe_stride;
                let vaddr = base + slot;
                let tm = machine.timing;
                if machine.table.classify_access(vaddr, true) == AccessOutcome::Ok {
                    let cached = machine.cache.state(vaddr) != crate::machine::LineState::Invalid;
                    machine.clock += if cached { tm.hit_latency } else { tm.miss_latency };
                    machine.cache.touch_read(vaddr);
                } else {
                    machine.clock += ISSUE_COST;
                }
            }
        }
    }

    machine.commit_drained_stores();
    result.cycles_consumed = machine.clock - start;
    Ok(result)
}

/// Transient shadow of a faulting load. Returns whether forwarding happened;
/// on success executes the dependent slice inside the transient window,
/// recording probe touches. Register effects are confined to a shadow file
/// and discarded — only cache fills survive the squash.
#[allow(clippy::too_many_arguments)]
fn faulting_load(
    machine: &mut MachineState,
    program: &AttackProgram,
    binds: &SymbolBindings,
    load_idx: usize,
    vaddr: u64,
    size: u8,
    fault: AccessOutcome,
    touches: &mut BTreeSet<u8>,
) -> Result<bool, EngineError> {
    let load_time = machine.clock;
    let tm = machine.timing;
    let entry = machine
        .store_buffer
        .lookup_alias(page_offset(vaddr), size, load_time);
    let alias_hit = entry.is_some();
    let mitigated = machine.microcode.forwarding_mitigated;
    if !forward_decision(fault, alias_hit, mitigated, load_time, entry) {
        // Fault resolution cost; no data means no dependent execution at all.
        machine.clock += tm.miss_latency;
        return Ok(false);
    }

    let dest = match &program.instrs[load_idx] {
        Instr::Load { dest, .. } => *dest,
        _ => unreachable!("faulting_load called on a non-load"),
    };
    let mut shadow = machine.regs;
    shadow[dest.index()] = le_value(entry.unwrap().bytes_at_offset(page_offset(vaddr), size));

    // Dependent instructions issue one per cycle in the fault's shadow until
    // the transient window closes or a nested fault stalls them.
    for (k, instr) in program.instrs[load_idx + 1..].iter().enumerate() {
        let issue_time = load_time + 1 + k as u64;
        if issue_time >= load_time + tm.transient_window {
            break;
        }
        match instr {
            Instr::SetReg { reg, value } => shadow[reg.index()] = *value,
            Instr::Load { dest, addr, size } => {
                let vaddr = binds.resolve(addr)?;
                if machine.table.classify_access(vaddr, true).is_fault() {
                    break;
                }
                shadow[dest.index()] =
                    if let Some(e) = machine.store_buffer.lookup_exact(vaddr, *size, issue_time) {
                        le_value(e.bytes_at_offset(page_offset(vaddr), *size))
                    } else {
                        machine.read_memory(vaddr, *size)
                    };
                machine.cache.touch_read(vaddr);
            }
            Instr::Encode { probe, index } => {
                let base = binds
                    .addrs
                    .get(probe)
                    .copied()
                    .ok_or_else(|| EngineError::UnboundSymbol(probe.clone()))?;
                let byte = (shadow[index.index()] & 0xff) as u8;
                let slot_addr = base + byte as u64 * binds.probe_stride;
                if machine.table.classify_access(slot_addr, true) == AccessOutcome::Ok {
                    machine.cache.touch_read(slot_addr);
                    touches.insert(byte);
                }
            }
            // Stores, flushes, locked RMWs and fences have no transient
            // side effects in this model.
            Instr::Store { .. } | Instr::Flush { .. } | Instr::LockInc { .. } | Instr::Fence => {}
        }
    }

    machine.clock += tm.miss_latency;
    Ok(true)
}

/// Scans forward from a store for the prep op that will hit the same cache
/// line before the next load. This is how the insert-time drain deadline
/// knows whether a clflush or locked RMW is about to pin the entry.
fn upcoming_prep(
    program: &AttackProgram,
    store_idx: usize,
    store_vaddr: u64,
    binds: &SymbolBindings,
) -> PrepOp {
    let line = line_base(store_vaddr);
    for instr in &program.instrs[store_idx + 1..] {
        match instr {
            Instr::Load { .. } => break,
            Instr::Flush { addr } => {
                if binds.resolve(addr).is_ok_and(|v| line_base(v) == line) {
                    return PrepOp::Clflush;
                }
            }
            Instr::LockInc { addr } => {
                if binds.resolve(addr).is_ok_and(|v| line_base(v) == line) {
                    return PrepOp::LockInc;
                }
            }
            _ => {}
        }
    }
    PrepOp::None
}

fn le_value(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(buf)
}
