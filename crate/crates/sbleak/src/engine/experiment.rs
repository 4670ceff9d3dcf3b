//! End-to-end leak experiments: bind a program to a concrete address layout,
//! run attempts against a cycle budget, receive each attempt through the
//! flush+reload channel, and aggregate what was recovered.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::channel::{
    calibrate_threshold, decode_byte, measure_reload, ChannelParams, ProbeArray, TimingOracle,
    PROBE_SLOTS,
};
use crate::dsl::{AttackProgram, FaultClass, Instr, SymbolKind};
use crate::engine::{draw_issue_delay, run_attempt_delayed, EngineError, SymbolBindings};
use crate::machine::{
    page_base, profile_by_revision, MachineState, MicrocodeProfile, PageMapping, PageTable,
    TimingModel, PAGE_SIZE,
};
use crate::rng::stream_rng;

/// First data/fault page. Probe arrays live far above so even a 256-slot
/// array at a large stride cannot shadow a data page.
const DATA_BASE: u64 = 0x0010_0000;
const PROBE_BASE: u64 = 0x0100_0000;

/// Default attempt budget: two minutes of simulated time at the default
/// nominal frequency (1 GHz).
pub const DEFAULT_BUDGET: u64 = 120_000_000_000;

/// Oracle / delay randomness live on separate streams of the run seed so
/// adding draws to one never perturbs the other.
const STREAM_ORACLE: u64 = 0x6f7261636c65; // "oracle"
const STREAM_DELAY: u64 = 0x64656c6179; // "delay"

/// Calibration samples per class before an experiment starts.
const CALIBRATION_SAMPLES: usize = 512;

/// The simulated target: which microcode it runs, how its memory system is
/// timed, and how noisy the measurement channel is.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub microcode: MicrocodeProfile,
    pub timing: TimingModel,
    pub channel: ChannelParams,
}

impl Default for MachineConfig {
    /// The classic target: earliest shipped microcode, stock timing.
    fn default() -> Self {
        MachineConfig {
            microcode: *profile_by_revision(0x32).expect("builtin profile"),
            timing: TimingModel::default(),
            channel: ChannelParams::default(),
        }
    }
}

impl MachineConfig {
    /// Same configuration but running the given microcode revision.
    pub fn with_revision(mut self, revision: u32) -> Option<Self> {
        self.microcode = *profile_by_revision(revision)?;
        Some(self)
    }
}

/// A program bound to concrete pages on a warmed machine, ready to run.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    program: AttackProgram,
    machine: MachineState,
    bindings: SymbolBindings,
    probe: Option<ProbeArray>,
    channel: ChannelParams,
    warm_lines: Vec<u64>,
}

impl ExperimentSetup {
    /// Lays out the program's symbols in memory and builds the pristine
    /// machine. Data and fault pages are assigned consecutively from a fixed
    /// base in declaration order; each probe symbol gets its own slot region.
    /// Store-target lines are pre-warmed so an unprepared store finds its
    /// line cached, exactly the state the shortest drain window assumes.
    pub fn from_program(
        program: AttackProgram,
        cfg: &MachineConfig,
    ) -> Result<Self, EngineError> {
        cfg.timing.validate()?;
        cfg.channel.validate()?;

        let mut table = PageTable::new();
        let mut bindings = SymbolBindings {
            probe_stride: cfg.channel.stride,
            ..SymbolBindings::default()
        };
        let mut probe: Option<ProbeArray> = None;
        let mut next_data = DATA_BASE;
        let mut next_probe = PROBE_BASE;
        for sym in &program.symbols {
            match sym.kind {
                SymbolKind::Page => {
                    table.map(PageMapping::user_data(next_data))?;
                    bindings.addrs.insert(sym.name.clone(), next_data);
                    next_data += PAGE_SIZE;
                }
                SymbolKind::Fault(class) => {
                    let mapping = match class {
                        FaultClass::US => PageMapping::supervisor(next_data),
                        FaultClass::PK => PageMapping::key_denied(next_data, 1),
                        FaultClass::NP => PageMapping::not_present(next_data),
                    };
                    table.map(mapping)?;
                    bindings.addrs.insert(sym.name.clone(), next_data);
                    next_data += PAGE_SIZE;
                }
                SymbolKind::Probe => {
                    let array = ProbeArray::new(next_probe, cfg.channel.stride)?;
                    let mut pages = BTreeSet::new();
                    for slot in 0..PROBE_SLOTS {
                        pages.insert(page_base(array.slot_addr(slot as u8)));
                    }
                    for page in pages {
                        table.map(PageMapping::user_data(page))?;
                    }
                    bindings.addrs.insert(sym.name.clone(), next_probe);
                    next_probe = page_base(array.span_end() + PAGE_SIZE - 1) + PAGE_SIZE;
                    probe.get_or_insert(array);
                }
            }
        }

        // Warm every store-target line (faulting targets have no line to
        // warm in any meaningful sense, but touching them is harmless).
        let mut warm_lines = Vec::new();
        for instr in &program.instrs {
            if let Instr::Store { addr, .. } = instr {
                warm_lines.push(bindings.resolve(addr)?);
            }
        }

        let mut machine = MachineState::new(table, cfg.microcode, cfg.timing);
        machine.reset(&warm_lines);

        Ok(ExperimentSetup {
            program,
            machine,
            bindings,
            probe,
            channel: cfg.channel,
            warm_lines,
        })
    }

    /// The pristine machine this experiment starts from.
    pub fn machine(&self) -> &MachineState {
        &self.machine
    }

    pub fn program(&self) -> &AttackProgram {
        &self.program
    }

    pub fn bindings(&self) -> &SymbolBindings {
        &self.bindings
    }

    /// The probe array used for reception, if the program declared one.
    pub fn probe(&self) -> Option<&ProbeArray> {
        self.probe.as_ref()
    }

    /// Cache lines re-warmed at the start of every trial.
    pub fn warm_lines(&self) -> &[u64] {
        &self.warm_lines
    }

    /// Runs attempts round-robin over `secret` until the cycle budget is
    /// exhausted, receiving each attempt through flush+reload. Fully
    /// deterministic in `seed`; calibration time is not billed against the
    /// budget.
    pub fn run(
        &self,
        secret: &[u8],
        budget_cycles: u64,
        seed: u64,
    ) -> Result<LeakageReport, EngineError> {
        let mut oracle = TimingOracle::new(&self.channel, crate::rng::derive_seed(seed, STREAM_ORACLE))?;
        let hits = oracle.sample_hits(CALIBRATION_SAMPLES);
        let misses = oracle.sample_misses(CALIBRATION_SAMPLES);
        let threshold = calibrate_threshold(&hits, &misses)?;
        let mut delay_rng = stream_rng(seed, STREAM_DELAY);

        let mut machine = self.machine.clone();
        let mut program = self.program.clone();
        let tm = machine.timing;
        let mut votes = vec![[0u32; PROBE_SLOTS]; secret.len()];
        let mut attempts: u64 = 0;
        let mut correct_decodes: u64 = 0;

        while !secret.is_empty() && machine.clock < budget_cycles {
            let pos = attempts as usize % secret.len();
            program.plant_secret(secret[pos] as u64);
            let delay = draw_issue_delay(&mut delay_rng, &tm);
            run_attempt_delayed(&mut machine, &program, &self.bindings, delay)?;
            attempts += 1;

            let Some(array) = &self.probe else { continue };
            let latencies = measure_reload(array, &machine.cache, &mut oracle);
            // Bill the receive phase: one timed access per slot plus the
            // flush that re-arms the array.
            let reload_cycles: f64 = latencies.iter().sum();
            machine.clock += reload_cycles as u64 + PROBE_SLOTS as u64 * tm.hit_latency;
            machine.cache.flush_range(array.base(), array.span_end());

            if let Some(decoded) = decode_byte(&latencies, threshold) {
                votes[pos][decoded.value as usize] += 1;
                if decoded.value == secret[pos] {
                    correct_decodes += 1;
                }
            }
        }

        let recovered = votes
            .iter()
            .enumerate()
            .map(|(position, tally)| {
                let total: u32 = tally.iter().sum();
                let (value, &best) = tally
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .expect("tally is non-empty");
                RecoveredByte {
                    position,
                    value: value as u8,
                    confidence: if total == 0 { 0.0 } else { best as f64 / total as f64 },
                }
            })
            .collect();

        let sim_cycles = machine.clock;
        let rate = if sim_cycles == 0 {
            0.0
        } else {
            correct_decodes as f64 * tm.nominal_frequency as f64 / sim_cycles as f64
        };
        Ok(LeakageReport {
            secret_len: secret.len(),
            recovered,
            attempts,
            correct_decodes,
            sim_cycles,
            rate,
        })
    }
}

/// Majority-vote outcome for one secret position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredByte {
    pub position: usize,
    pub value: u8,
    /// Fraction of this position's decodes that voted for `value`.
    pub confidence: f64,
}

/// What an experiment leaked and how fast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageReport {
    pub secret_len: usize,
    pub recovered: Vec<RecoveredByte>,
    /// Attempts issued before the budget ran out.
    pub attempts: u64,
    /// Attempts whose decoded byte matched the byte planted for them.
    pub correct_decodes: u64,
    /// Simulated cycles consumed (attempts + receive phases).
    pub sim_cycles: u64,
    /// Correct decodes per simulated second.
    pub rate: f64,
}

impl LeakageReport {
    /// The recovered secret as raw bytes.
    pub fn recovered_bytes(&self) -> Vec<u8> {
        self.recovered.iter().map(|r| r.value).collect()
    }
}
