//! Command-line front end.
//!
//! Four subcommands: `simulate` runs one leak experiment, `table` sweeps
//! every built-in microcode revision against the three store preparations,
//! `fuzz` runs the mutation search, `check` assesses a CPU snapshot file.
//!
//! Exit codes: 0 success, 1 `check` found a vulnerable part, 2 bad flags or
//! config, 3 attack-program parse error, 4 unreadable snapshot.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelParams;
use crate::checker::{assess, parse_snapshot, AssessStatus};
use crate::config::parse_config;
use crate::dsl::{canonical_msbds_program, parse_program, FaultClass};
use crate::engine::{ExperimentSetup, LeakageReport, MachineConfig, DEFAULT_BUDGET};
use crate::fuzzer::{fuzz_loop, DEFAULT_TRIALS};
use crate::machine::{builtin_profiles, profile_by_revision, revision_hex, PrepOp, TimingModel};
use crate::rng::{derive_seed, stream_rng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VULNERABLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROGRAM: i32 = 3;
pub const EXIT_SNAPSHOT: i32 = 4;

/// Secret planted by `table` runs; the rates count how fast its bytes come
/// back out of the store buffer.
const TABLE_SECRET: &[u8] = b"stale-data";

#[derive(Parser)]
#[command(
    name = "sbleak",
    version,
    about = "store-buffer leak simulator: run it, table it, rediscover it, check for it"
)]
struct Cli {
    /// Seed for every random stream (experiments, fuzzing, secrets).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Config file overriding timing-model and channel parameters.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one leak experiment and report what was recovered.
    Simulate(SimulateArgs),
    /// Sweep all built-in microcode revisions x store preparations to CSV.
    Table(TableArgs),
    /// Mutation-search the attack space for leaking variants.
    Fuzz(FuzzArgs),
    /// Assess a CPU snapshot file for store-buffer leakage.
    Check(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Microcode revision to simulate (e.g. 0x32).
    #[arg(long, default_value = "0x32", value_parser = parse_revision)]
    profile: u32,
    /// Store preparation: none, clflush, or lockinc.
    #[arg(long, default_value = "lockinc", value_parser = parse_prep)]
    prep: PrepOp,
    /// Fault class the leaking load takes: us, pk, or np.
    #[arg(long, default_value = "us", value_parser = parse_fault)]
    fault: FaultClass,
    /// Secret to plant, as text. Overrides --secret-len.
    #[arg(long)]
    secret: Option<String>,
    /// Length of the seeded random secret when --secret is not given.
    #[arg(long, default_value_t = 16)]
    secret_len: usize,
    /// Attempt budget in simulated cycles (default: two simulated minutes).
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Attack program file to run instead of the canonical one
    /// (--prep/--fault only shape the canonical program).
    #[arg(long, value_name = "FILE")]
    program: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Attempt budget in simulated cycles per table cell.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct FuzzArgs {
    /// Microcode revision to fuzz against (e.g. 0x48).
    #[arg(long, default_value = "0x48", value_parser = parse_revision)]
    profile: u32,
    /// Search iterations (one genome evaluation each).
    #[arg(long, default_value_t = 10_000)]
    max_iters: u32,
    /// Attempts per genome evaluation.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: u32,
    /// Stop at the first labelled variant instead of running all iterations.
    #[arg(long)]
    first_hit: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Snapshot file (`key = value` lines; see README for the schema).
    snapshot: PathBuf,
}

fn parse_revision(s: &str) -> Result<u32, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| format!("`{s}` is not a revision number"))
}

fn parse_prep(s: &str) -> Result<PrepOp, String> {
    match s {
        "none" => Ok(PrepOp::None),
        "clflush" => Ok(PrepOp::Clflush),
        "lockinc" => Ok(PrepOp::LockInc),
        _ => Err(format!("`{s}` is not a preparation (none, clflush, lockinc)")),
    }
}

fn parse_fault(s: &str) -> Result<FaultClass, String> {
    FaultClass::from_mnemonic(s).ok_or_else(|| format!("`{s}` is not a fault class (us, pk, np)"))
}

/// One row of the revision sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub mc_version: String,
    pub mc_date: String,
    pub vulnerable: bool,
    pub clflush_rate: f64,
    pub lockinc_rate: f64,
    pub unmodified_rate: f64,
}

/// The full sweep, one row per built-in revision, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub rows: Vec<TableRow>,
}

impl TableReport {
    pub const CSV_HEADER: &'static str =
        "mc_version,mc_date,vulnerable,clflush_rate,lockinc_rate,unmodified_rate";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mc_version, r.mc_date, r.vulnerable, r.clflush_rate, r.lockinc_rate,
                r.unmodified_rate
            ));
        }
        out
    }
}

/// Computes the revision sweep: every built-in profile against the three
/// store preparations, `budget` cycles per cell. Cells run in parallel;
/// each derives its own seed, so the report is schedule-independent.
pub fn build_table(
    timing: TimingModel,
    channel: ChannelParams,
    budget: u64,
    seed: u64,
) -> TableReport {
    let preps = [PrepOp::Clflush, PrepOp::LockInc, PrepOp::None];
    let cells: Vec<(usize, usize)> = (0..builtin_profiles().len())
        .flat_map(|p| (0..preps.len()).map(move |k| (p, k)))
        .collect();

    let rates: Vec<f64> = cells
        .par_iter()
        .map(|&(p, k)| {
            let profile = builtin_profiles()[p];
            let cfg = MachineConfig { microcode: profile, timing, channel };
            let setup =
                ExperimentSetup::from_program(canonical_msbds_program(preps[k], FaultClass::US), &cfg)
                    .expect("canonical program binds against a validated config");
            let cell_seed = derive_seed(seed, (p * preps.len() + k) as u64);
            setup
                .run(TABLE_SECRET, budget, cell_seed)
                .expect("bound canonical program cannot fail")
                .rate
        })
        .collect();

    let rows = builtin_profiles()
        .iter()
        .enumerate()
        .map(|(p, profile)| TableRow {
            mc_version: profile.revision_hex(),
            mc_date: profile.date.to_string(),
            vulnerable: !profile.forwarding_mitigated,
            clflush_rate: rates[p * preps.len()],
            lockinc_rate: rates[p * preps.len() + 1],
            unmodified_rate: rates[p * preps.len() + 2],
        })
        .collect();
    TableReport { rows }
}

/// Parses `args` and runs the tool, writing all output to `out`.
/// Returns the process exit code.
pub fn run<I, T, W>(args: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };

    let (timing, channel) = match load_config(&cli.config, out) {
        Ok(pair) => pair,
        Err(code) => return code,
    };

    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args, timing, channel, out),
        Command::Table(args) => cmd_table(&cli, args, timing, channel, out),
        Command::Fuzz(args) => cmd_fuzz(&cli, args, timing, channel, out),
        Command::Check(args) => cmd_check(&cli, args, out),
    }
}

fn load_config(
    path: &Option<PathBuf>,
    out: &mut impl Write,
) -> Result<(TimingModel, ChannelParams), i32> {
    let Some(path) = path else {
        return Ok((TimingModel::default(), ChannelParams::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(out, "error: cannot read config {}: {e}", path.display());
        EXIT_USAGE
    })?;
    parse_config(&text).map_err(|e| {
        let _ = writeln!(out, "error: config {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn lookup_profile(revision: u32, out: &mut impl Write) -> Result<MachineConfig, i32> {
    match profile_by_revision(revision) {
        Some(p) => Ok(MachineConfig {
            microcode: *p,
            timing: TimingModel::default(),
            channel: ChannelParams::default(),
        }),
        None => {
            let known: Vec<String> =
                builtin_profiles().iter().map(|p| p.revision_hex()).collect();
            let _ = writeln!(
                out,
                "error: no built-in profile for revision {}; known: {}",
                revision_hex(revision),
                known.join(", ")
            );
            Err(EXIT_USAGE)
        }
    }
}

fn cmd_simulate(
    cli: &Cli,
    args: &SimulateArgs,
    timing: TimingModel,
    channel: ChannelParams,
    out: &mut impl Write,
) -> i32 {
    let mut cfg = match lookup_profile(args.profile, out) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    cfg.timing = timing;
    cfg.channel = channel;

    let program = match &args.program {
        None => canonical_msbds_program(args.prep, args.fault),
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    let _ = writeln!(out, "error: cannot read program {}: {e}", path.display());
                    return EXIT_USAGE;
                }
            };
            match parse_program(&text) {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(out, "error: program {}: {e}", path.display());
                    return EXIT_PROGRAM;
                }
            }
        }
    };

    let secret: Vec<u8> = match &args.secret {
        Some(text) => text.as_bytes().to_vec(),
        None => {
            let mut rng = stream_rng(cli.seed, u64::from_le_bytes(*b"secret\0\0"));
            (0..args.secret_len).map(|_| rng.gen()).collect()
        }
    };

    let setup = match ExperimentSetup::from_program(program, &cfg) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let report = match setup.run(&secret, args.budget, cli.seed) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_USAGE;
        }
    };

    if cli.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        write_simulate_text(&cfg, args, &secret, &report, out);
    }
    EXIT_OK
}

fn write_simulate_text(
    cfg: &MachineConfig,
    args: &SimulateArgs,
    secret: &[u8],
    report: &LeakageReport,
    out: &mut impl Write,
) {
    let p = &cfg.microcode;
    let forwarding = if p.forwarding_mitigated { "blocked" } else { "enabled" };
    let _ = writeln!(out, "profile      {} ({}), forwarding {}", p.revision_hex(), p.date, forwarding);
    if args.program.is_none() {
        let _ = writeln!(out, "prep         {}", args.prep);
        let _ = writeln!(out, "fault        {}", args.fault);
    }
    let _ = writeln!(out, "secret       {} bytes", report.secret_len);
    let _ = writeln!(out, "attempts     {}", report.attempts);
    let _ = writeln!(out, "correct      {}", report.correct_decodes);
    let _ = writeln!(out, "sim_cycles   {}", report.sim_cycles);
    let _ = writeln!(out, "rate         {:.2} B/s", report.rate);

    let bytes = report.recovered_bytes();
    let hex: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
    let gloss: String = bytes
        .iter()
        .map(|&b| if (0x20..0x7f).contains(&b) { b as char } else { '.' })
        .collect();
    let _ = writeln!(out, "recovered    {} |{}|", hex.join(" "), gloss);
    let exact = bytes.iter().zip(secret).filter(|(a, b)| a == b).count();
    let _ = writeln!(out, "exact        {}/{} bytes", exact, secret.len());
}

fn cmd_table(
    cli: &Cli,
    args: &TableArgs,
    timing: TimingModel,
    channel: ChannelParams,
    out: &mut impl Write,
) -> i32 {
    let report = build_table(timing, channel, args.budget, cli.seed);
    if cli.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        let _ = write!(out, "{}", report.to_csv());
    }
    EXIT_OK
}

fn cmd_fuzz(
    cli: &Cli,
    args: &FuzzArgs,
    timing: TimingModel,
    channel: ChannelParams,
    out: &mut impl Write,
) -> i32 {
    let mut cfg = match lookup_profile(args.profile, out) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    cfg.timing = timing;
    cfg.channel = channel;
    if args.max_iters == 0 || args.trials == 0 {
        let _ = writeln!(out, "error: --max-iters and --trials must be positive");
        return EXIT_USAGE;
    }

    let report = fuzz_loop(&cfg, args.max_iters, cli.seed, args.trials, args.first_hit);
    let rendered = if cli.json {
        serde_json::to_string(&report).unwrap()
    } else {
        serde_json::to_string_pretty(&report).unwrap()
    };
    let _ = writeln!(out, "{rendered}");
    EXIT_OK
}

fn cmd_check(cli: &Cli, args: &CheckArgs, out: &mut impl Write) -> i32 {
    let text = match std::fs::read_to_string(&args.snapshot) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(out, "error: cannot read snapshot {}: {e}", args.snapshot.display());
            return EXIT_SNAPSHOT;
        }
    };
    let snapshot = match parse_snapshot(&text) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(out, "error: snapshot {}: {e}", args.snapshot.display());
            return EXIT_SNAPSHOT;
        }
    };
    let assessment = assess(&snapshot);
    if cli.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&assessment).unwrap());
    } else {
        let _ = write!(out, "{}", assessment.render());
    }
    if assessment.status == AssessStatus::VulnerableMSBDS {
        EXIT_VULNERABLE
    } else {
        EXIT_OK
    }
}
