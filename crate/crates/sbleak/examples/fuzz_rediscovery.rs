//! Rediscover the attack by mutation search. The fuzzer knows nothing about
//! store buffers — it just mutates fault class, line preparation, address
//! aliasing, access sizes, and fencing, and keeps whatever decodes planted
//! bytes. On a vulnerable microcode it converges on the leaking shape; on a
//! fixed one it finds nothing.
//!
//! Run with: cargo run --release --example fuzz_rediscovery

use sbleak::engine::MachineConfig;
use sbleak::fuzzer::fuzz_loop;

fn main() {
    for revision in [0x48u32, 0x86] {
        let cfg = MachineConfig::default().with_revision(revision).unwrap();
        println!(
            "fuzzing against microcode {} (forwarding {})",
            cfg.microcode.revision_hex(),
            if cfg.microcode.forwarding_mitigated { "blocked" } else { "enabled" }
        );

        let report = fuzz_loop(&cfg, 3000, 0, 16, false);
        println!(
            "  {} iterations, {} distinct leaking genomes",
            report.iterations,
            report.positives.len()
        );
        for p in report.positives.iter().take(5) {
            println!(
                "  iter {:>5}: {} score {:.2} — fault {:?}, prep {:?}, {:?}, store {} load {}",
                p.found_at,
                p.label,
                p.score,
                p.genome.fault_class,
                p.genome.prep,
                p.genome.alias_mode,
                p.genome.store_size,
                p.genome.load_size,
            );
        }
        if report.positives.len() > 5 {
            println!("  ... and {} more", report.positives.len() - 5);
        }
        println!();
    }
}
