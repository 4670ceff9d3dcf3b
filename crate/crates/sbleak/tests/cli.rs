//! End-to-end tests of the command-line surface: exit codes, file handling,
//! and the shape of human and JSON output. Everything drives `cli::run`
//! directly against fixture files, so no subprocess is spawned.

use sbleak::cli::{run, EXIT_OK, EXIT_PROGRAM, EXIT_SNAPSHOT, EXIT_USAGE, EXIT_VULNERABLE};

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn capture(args: &[&str]) -> (i32, String) {
    let mut buf = Vec::new();
    let code = run(args.iter().copied(), &mut buf);
    (code, String::from_utf8(buf).unwrap())
}

#[test]
fn test_check_vulnerable_snapshot_exits_one_and_flags_errata() {
    let path = fixture("snapshot_0x48.txt");
    let (code, out) = capture(&["sbleak", "check", &path]);
    assert_eq!(code, EXIT_VULNERABLE);
    assert!(out.contains("status = VulnerableMSBDS"), "{out}");
    assert!(out.contains("errata_057 = true"), "{out}");
    assert!(out.contains("incorrectly claiming immunity"), "{out}");
}

#[test]
fn test_check_mitigated_snapshot_exits_zero() {
    let path = fixture("snapshot_0x86.txt");
    let (code, out) = capture(&["sbleak", "check", &path]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("status = Mitigated"), "{out}");
    assert!(out.contains("errata_057 = false"), "{out}");
}

#[test]
fn test_check_malformed_snapshot_exits_four() {
    let path = fixture("snapshot_bad.txt");
    let (code, out) = capture(&["sbleak", "check", &path]);
    assert_eq!(code, EXIT_SNAPSHOT);
    assert!(out.contains("not-a-number"), "{out}");
}

#[test]
fn test_check_missing_snapshot_file_exits_four() {
    let (code, out) = capture(&["sbleak", "check", "/no/such/file.txt"]);
    assert_eq!(code, EXIT_SNAPSHOT);
    assert!(out.contains("cannot read snapshot"), "{out}");
}

#[test]
fn test_check_json_output_parses() {
    let path = fixture("snapshot_0x48.txt");
    let (code, out) = capture(&["sbleak", "--json", "check", &path]);
    assert_eq!(code, EXIT_VULNERABLE);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["status"], "VulnerableMSBDS");
    assert_eq!(v["errata_057"], true);
    assert!(v["rationale"].as_str().unwrap().contains("0x48"));
}

#[test]
fn test_simulate_rejects_malformed_program_with_exit_three() {
    let path = fixture("bad_program.sbl");
    let (code, out) = capture(&["sbleak", "simulate", "--program", &path, "--budget", "1000000"]);
    assert_eq!(code, EXIT_PROGRAM);
    assert!(out.contains("unknown symbol `Z`"), "{out}");
}

#[test]
fn test_simulate_missing_program_file_is_usage_error() {
    let (code, out) =
        capture(&["sbleak", "simulate", "--program", "/no/such/program.sbl"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(out.contains("cannot read program"), "{out}");
}

#[test]
fn test_simulate_json_report_round_trips() {
    let (code, out) = capture(&[
        "sbleak", "--json", "simulate", "--secret", "ok", "--budget", "200000000", "--seed", "3",
    ]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["secret_len"], 2);
    assert!(v["attempts"].as_u64().unwrap() > 0);
    assert_eq!(v["recovered"].as_array().unwrap().len(), 2);
    // Default profile leaks; a 200M-cycle budget recovers a 2-byte secret.
    assert_eq!(v["recovered"][0]["value"], u64::from(b'o'));
    assert_eq!(v["recovered"][1]["value"], u64::from(b'k'));
}

#[test]
fn test_simulate_human_output_reports_recovery() {
    let (code, out) = capture(&[
        "sbleak", "simulate", "--secret", "hi", "--budget", "200000000", "--seed", "1",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("forwarding enabled"), "{out}");
    assert!(out.contains("|hi|"), "{out}");
    assert!(out.contains("exact        2/2 bytes"), "{out}");
}

#[test]
fn test_fuzz_json_flag_emits_compact_single_line() {
    let (code, out) = capture(&[
        "sbleak", "--json", "fuzz", "--max-iters", "50", "--trials", "4", "--seed", "11",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 1, "compact JSON should be one line: {out}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["seed"], 11);
    assert!(v["positives"].is_array());
}

#[test]
fn test_missing_subcommand_is_usage_error() {
    let (code, _) = capture(&["sbleak"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn test_table_csv_has_header_and_eleven_rows() {
    let (code, out) = capture(&["sbleak", "table", "--budget", "10000000"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("mc_version,"));
}
