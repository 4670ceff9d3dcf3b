//! Mutation search over attack primitives.
//!
//! A genome fixes the handful of knobs an attack candidate has — which fault
//! its load takes, how the store's cache line is prepared, how store and
//! load addresses relate, access sizes, and whether a fence separates the
//! two. The search mutates one knob at a time, climbing on leak score with
//! periodic restarts, and labels every leaking genome it encounters.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{calibrate_threshold, decode_byte, measure_reload, TimingOracle};
use crate::dsl::{
    AddrExpr, AttackProgram, FaultClass, Instr, Reg, SymbolDecl, SymbolKind, CANONICAL_OFFSET,
};
use crate::engine::{draw_issue_delay, run_attempt_delayed, ExperimentSetup, MachineConfig};
use crate::machine::{AccessOutcome, PrepOp};
use crate::rng::{derive_seed, stream_rng};

/// Load offset used when a genome wants the aliasing comparison to fail:
/// same page-offset arithmetic, different low-12-bit value.
const MISALIGNED_OFFSET: u64 = 0x223;

/// Restart the climb after this many non-improving iterations.
const RESTART_AFTER: u32 = 200;

/// Default attempts per genome evaluation.
pub const DEFAULT_TRIALS: u32 = 32;

/// Fault class a genome asks its load to take. `NoFault` loads from an
/// ordinary user page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenomeFault {
    #[serde(rename = "none")]
    NoFault,
    US,
    PK,
    NP,
}

impl GenomeFault {
    pub const ALL: [GenomeFault; 4] =
        [GenomeFault::NoFault, GenomeFault::US, GenomeFault::PK, GenomeFault::NP];

    fn fault_class(self) -> Option<FaultClass> {
        match self {
            GenomeFault::NoFault => None,
            GenomeFault::US => Some(FaultClass::US),
            GenomeFault::PK => Some(FaultClass::PK),
            GenomeFault::NP => Some(FaultClass::NP),
        }
    }
}

/// How the load address relates to the store address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliasMode {
    SamePageSameOffset,
    CrossPageSameOffset,
    CrossPageDifferentOffset,
}

impl AliasMode {
    pub const ALL: [AliasMode; 3] = [
        AliasMode::SamePageSameOffset,
        AliasMode::CrossPageSameOffset,
        AliasMode::CrossPageDifferentOffset,
    ];
}

/// One point in the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    pub fault_class: GenomeFault,
    pub prep: PrepOp,
    pub alias_mode: AliasMode,
    pub store_size: u8,
    pub load_size: u8,
    pub fence_before_load: bool,
}

/// Taxonomy label for a leaking genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantLabel {
    #[serde(rename = "MeltdownUS_SB")]
    MeltdownUsSb,
    #[serde(rename = "MeltdownMPK_SB")]
    MeltdownMpkSb,
    NoLeak,
}

impl std::fmt::Display for VariantLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariantLabel::MeltdownUsSb => "MeltdownUS_SB",
            VariantLabel::MeltdownMpkSb => "MeltdownMPK_SB",
            VariantLabel::NoLeak => "NoLeak",
        })
    }
}

/// What an evaluation observed, boiled down for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakEvidence {
    /// Fault the genome's attempts take (identical across trials).
    pub fault: AccessOutcome,
    /// Whether any trial decoded exactly the byte planted for it.
    pub byte_match: bool,
}

/// A leaking genome found by the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveFinding {
    pub genome: Genome,
    pub label: VariantLabel,
    /// Best leak score observed for this genome.
    pub score: f64,
    /// Iteration (1-based) at which the genome first scored above zero.
    pub found_at: u32,
}

/// Outcome of a full search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    /// Genomes evaluated (equals `max_iters` unless stopped on first hit).
    pub iterations: u32,
    /// Every distinct genome that ever scored above zero, in discovery order.
    pub positives: Vec<PositiveFinding>,
}

/// Draws a genome uniformly from the whole space.
pub fn random_genome(rng: &mut impl Rng) -> Genome {
    Genome {
        fault_class: GenomeFault::ALL[rng.gen_range(0..GenomeFault::ALL.len())],
        prep: PrepOp::ALL[rng.gen_range(0..PrepOp::ALL.len())],
        alias_mode: AliasMode::ALL[rng.gen_range(0..AliasMode::ALL.len())],
        store_size: rng.gen_range(1..=8),
        load_size: rng.gen_range(1..=8),
        fence_before_load: rng.gen(),
    }
}

/// Changes exactly one field to a different valid value, chosen uniformly.
pub fn mutate_genome(g: &Genome, rng: &mut impl Rng) -> Genome {
    fn pick_other<T: Copy + PartialEq>(all: &[T], current: T, rng: &mut impl Rng) -> T {
        loop {
            let v = all[rng.gen_range(0..all.len())];
            if v != current {
                return v;
            }
        }
    }
    let mut out = *g;
    match rng.gen_range(0..6) {
        0 => out.fault_class = pick_other(&GenomeFault::ALL, g.fault_class, rng),
        1 => out.prep = pick_other(&PrepOp::ALL, g.prep, rng),
        2 => out.alias_mode = pick_other(&AliasMode::ALL, g.alias_mode, rng),
        3 => out.store_size = pick_other(&[1, 2, 3, 4, 5, 6, 7, 8], g.store_size, rng),
        4 => out.load_size = pick_other(&[1, 2, 3, 4, 5, 6, 7, 8], g.load_size, rng),
        _ => out.fence_before_load = !g.fence_before_load,
    }
    out
}

/// Builds the genome's attack program: plant a byte, store it, prep the
/// line, optionally fence, take the load, transmit through the probe.
pub fn build_program(genome: &Genome) -> AttackProgram {
    let mut symbols = Vec::new();
    // Store page "A" exists whenever the store targets an ordinary page.
    // Fault genomes bind the load to fault page "F"; no-fault genomes use a
    // second plain page "B" for the cross-page modes.
    let (store_sym, load_sym) = match (genome.fault_class.fault_class(), genome.alias_mode) {
        (None, AliasMode::SamePageSameOffset) => ("A", "A"),
        (None, _) => ("A", "B"),
        (Some(_), AliasMode::SamePageSameOffset) => ("F", "F"),
        (Some(_), _) => ("A", "F"),
    };
    if store_sym == "A" || load_sym == "A" {
        symbols.push(SymbolDecl { name: "A".into(), kind: SymbolKind::Page });
    }
    if load_sym == "B" {
        symbols.push(SymbolDecl { name: "B".into(), kind: SymbolKind::Page });
    }
    if let Some(class) = genome.fault_class.fault_class() {
        symbols.push(SymbolDecl { name: "F".into(), kind: SymbolKind::Fault(class) });
    }
    symbols.push(SymbolDecl { name: "P".into(), kind: SymbolKind::Probe });

    let store_addr = AddrExpr { base: store_sym.into(), offset: CANONICAL_OFFSET };
    let load_offset = match genome.alias_mode {
        AliasMode::CrossPageDifferentOffset => MISALIGNED_OFFSET,
        _ => CANONICAL_OFFSET,
    };
    let load_addr = AddrExpr { base: load_sym.into(), offset: load_offset };

    let mut instrs = vec![
        Instr::SetReg { reg: Reg::new(1).unwrap(), value: 0x41 },
        Instr::Store { addr: store_addr.clone(), src: Reg::new(1).unwrap(), size: genome.store_size },
    ];
    match genome.prep {
        PrepOp::None => {}
        PrepOp::Clflush => instrs.push(Instr::Flush { addr: store_addr.clone() }),
        PrepOp::LockInc => instrs.push(Instr::LockInc { addr: store_addr.clone() }),
    }
    if genome.fence_before_load {
        instrs.push(Instr::Fence);
    }
    instrs.push(Instr::Load { dest: Reg::new(2).unwrap(), addr: load_addr, size: genome.load_size });
    instrs.push(Instr::Encode { probe: "P".into(), index: Reg::new(2).unwrap() });

    AttackProgram { symbols, instrs, ..AttackProgram::default() }
}

/// Scores a genome: the fraction of trials whose attempt faulted *and*
/// whose decoded byte equals the byte planted for that trial. Gating on the
/// fault keeps architectural store-to-load forwarding (a correct, boring
/// data path) from masquerading as a leak.
///
/// Deterministic in `seed`, including under parallel trial evaluation.
/// Panics if `trials` is zero or the config fails validation.
pub fn evaluate(genome: &Genome, cfg: &MachineConfig, trials: u32, seed: u64) -> f64 {
    evaluate_with_evidence(genome, cfg, trials, seed).0
}

/// [`evaluate`], also returning the evidence used for classification.
pub fn evaluate_with_evidence(
    genome: &Genome,
    cfg: &MachineConfig,
    trials: u32,
    seed: u64,
) -> (f64, LeakEvidence) {
    assert!(trials > 0, "evaluation needs at least one trial");
    let setup = ExperimentSetup::from_program(build_program(genome), cfg)
        .expect("genome programs bind against a validated config");
    let array = setup.probe().expect("genome programs declare a probe");

    let mut cal = TimingOracle::new(&cfg.channel, derive_seed(seed, u64::MAX))
        .expect("validated channel");
    let threshold = calibrate_threshold(&cal.sample_hits(512), &cal.sample_misses(512))
        .expect("calibration of a validated channel");

    let tm = cfg.timing;
    let outcomes: Vec<(bool, AccessOutcome)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = derive_seed(seed, trial as u64);
            let mut rng = stream_rng(trial_seed, 0);
            let planted: u8 = rng.gen();
            let delay = draw_issue_delay(&mut rng, &tm);

            let mut program = setup.program().clone();
            program.plant_secret(planted as u64);
            let mut machine = setup.machine().clone();
            let attempt = run_attempt_delayed(&mut machine, &program, setup.bindings(), delay)
                .expect("bound program");

            let mut oracle = TimingOracle::new(&cfg.channel, derive_seed(trial_seed, 1))
                .expect("validated channel");
            let latencies = measure_reload(array, &machine.cache, &mut oracle);
            let decoded = decode_byte(&latencies, threshold);
            let hit = attempt.fault.is_fault()
                && decoded.is_some_and(|d| d.value == planted);
            (hit, attempt.fault)
        })
        .collect();

    let hits = outcomes.iter().filter(|(hit, _)| *hit).count();
    let evidence = LeakEvidence {
        fault: outcomes.first().map(|(_, f)| *f).unwrap_or(AccessOutcome::Ok),
        byte_match: hits > 0,
    };
    (hits as f64 / trials as f64, evidence)
}

/// Applies the taxonomy: a genome is a store-buffer Meltdown variant only
/// when it asked for a supervisor or protection-key fault, actually took
/// that fault, and its decoded byte matched the plant.
pub fn classify(genome: &Genome, evidence: &LeakEvidence) -> VariantLabel {
    if !evidence.byte_match {
        return VariantLabel::NoLeak;
    }
    match (genome.fault_class, evidence.fault) {
        (GenomeFault::US, AccessOutcome::FaultUS) => VariantLabel::MeltdownUsSb,
        (GenomeFault::PK, AccessOutcome::FaultPK) => VariantLabel::MeltdownMpkSb,
        _ => VariantLabel::NoLeak,
    }
}

/// Restart-augmented hill climb. Each iteration evaluates one candidate —
/// a single-field mutant of the current genome, or a fresh random genome
/// after [`RESTART_AFTER`] stale iterations. Candidates beating the current
/// score become the new current; ties are accepted too, so the walk keeps
/// moving across flat regions. Every genome that ever scores above zero is
/// recorded once, at its first sighting.
///
/// Deterministic in `seed`: mutation randomness and evaluation randomness
/// are derived per iteration index, so schedules (parallel or serial trial
/// evaluation) cannot reorder anything observable.
pub fn fuzz_loop(
    cfg: &MachineConfig,
    max_iters: u32,
    seed: u64,
    trials: u32,
    first_hit: bool,
) -> FuzzReport {
    assert!(max_iters > 0, "search needs at least one iteration");
    let mut found: BTreeMap<Genome, PositiveFinding> = BTreeMap::new();
    let mut current: Option<(Genome, f64)> = None;
    let mut stale = 0u32;
    let mut iterations = 0u32;

    for iter in 1..=max_iters {
        let mut mut_rng = stream_rng(seed, iter as u64);
        let candidate = match &current {
            Some((genome, _)) if stale < RESTART_AFTER => mutate_genome(genome, &mut mut_rng),
            _ => {
                stale = 0;
                random_genome(&mut mut_rng)
            }
        };
        let eval_seed = derive_seed(seed, 0x4556_0000_0000 + iter as u64);
        let (score, evidence) = evaluate_with_evidence(&candidate, cfg, trials, eval_seed);
        iterations = iter;

        if score > 0.0 {
            let label = classify(&candidate, &evidence);
            found
                .entry(candidate)
                .and_modify(|p| p.score = p.score.max(score))
                .or_insert(PositiveFinding { genome: candidate, label, score, found_at: iter });
            if first_hit && label != VariantLabel::NoLeak {
                break;
            }
        }

        match &mut current {
            Some((genome, best)) => {
                if score > *best {
                    *genome = candidate;
                    *best = score;
                    stale = 0;
                } else {
                    // Ties are accepted (the walk drifts across plateaus —
                    // without this, a flat zero landscape pins the climb to
                    // its restart point) but still count as stale.
                    if score == *best {
                        *genome = candidate;
                    }
                    stale += 1;
                }
            }
            None => current = Some((candidate, score)),
        }
    }

    let mut positives: Vec<PositiveFinding> = found.into_values().collect();
    positives.sort_by_key(|p| p.found_at);
    FuzzReport { seed, iterations, positives }
}
