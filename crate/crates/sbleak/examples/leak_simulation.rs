//! End-to-end leak: plant a secret behind a supervisor page, hammer it with
//! canonical attempts on a vulnerable microcode, and watch the same attack
//! read nothing once the microcode blocks forwarding to faulting loads.
//!
//! Run with: cargo run --release --example leak_simulation

use sbleak::dsl::{canonical_msbds_program, FaultClass};
use sbleak::engine::{ExperimentSetup, MachineConfig};
use sbleak::machine::PrepOp;

// 0.05 simulated seconds — plenty for a short secret.
const BUDGET: u64 = 50_000_000;

fn main() {
    let secret = b"squeamish ossifrage";

    for revision in [0x32u32, 0x66] {
        let cfg = MachineConfig::default().with_revision(revision).unwrap();
        let program = canonical_msbds_program(PrepOp::LockInc, FaultClass::US);
        let setup = ExperimentSetup::from_program(program, &cfg).unwrap();
        let report = setup.run(secret, BUDGET, 1).unwrap();

        let p = &cfg.microcode;
        println!(
            "microcode {} ({}) — forwarding {}",
            p.revision_hex(),
            p.date,
            if p.forwarding_mitigated { "blocked" } else { "enabled" }
        );
        println!("  attempts      {}", report.attempts);
        println!("  correct       {}", report.correct_decodes);
        println!("  rate          {:.1} B/s", report.rate);

        let recovered = report.recovered_bytes();
        let gloss: String = recovered
            .iter()
            .map(|&b| if (0x20..0x7f).contains(&b) { b as char } else { '.' })
            .collect();
        let exact = recovered.iter().zip(secret).filter(|(a, b)| a == b).count();
        println!("  recovered     |{gloss}| ({exact}/{} exact)", secret.len());
        if let Some(worst) = report
            .recovered
            .iter()
            .min_by(|a, b| a.confidence.total_cmp(&b.confidence))
        {
            println!(
                "  confidence    worst position {} at {:.3}",
                worst.position, worst.confidence
            );
        }
        println!();
    }
}
