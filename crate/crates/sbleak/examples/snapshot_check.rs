//! Assess CPU snapshots: which parts forward store-buffer data to faulting
//! loads, and which ones claim MDS immunity while doing it (errata 057).
//!
//! Run with: cargo run --example snapshot_check

use sbleak::checker::{assess, parse_snapshot};

const SNAPSHOTS: [(&str, &str); 4] = [
    (
        "early laptop, immunity bit set",
        "vendor = GenuineIntel\nfamily = 6\nmodel = 126\nstepping = 5\n\
         microcode = 0x48\narch_capabilities = 0x2b\n",
    ),
    (
        "fix-window revision",
        "vendor = GenuineIntel\nfamily = 6\nmodel = 126\nstepping = 5\n\
         microcode = 0x5c\narch_capabilities = 0x2b\n",
    ),
    (
        "patched part",
        "vendor = GenuineIntel\nfamily = 6\nmodel = 126\nstepping = 5\n\
         microcode = 0x86\narch_capabilities = 0x2b\n",
    ),
    (
        "different core entirely",
        "vendor = GenuineIntel\nfamily = 6\nmodel = 142\nstepping = 10\n\
         microcode = 0xd6\n",
    ),
];

fn main() {
    for (label, text) in SNAPSHOTS {
        let snapshot = parse_snapshot(text).unwrap();
        let a = assess(&snapshot);
        println!("{label}:");
        for line in a.render().lines() {
            println!("  {line}");
        }
        println!();
    }
}
