//! Sweep every built-in microcode revision against the three store
//! preparations and print the resulting rate table as CSV. The pattern to
//! look for: seven early revisions leak (locked > flushed > unmodified),
//! four later ones read zero everywhere.
//!
//! Run with: cargo run --release --example microcode_table

use sbleak::channel::ChannelParams;
use sbleak::cli::build_table;
use sbleak::machine::TimingModel;

fn main() {
    // 0.5 simulated seconds per cell keeps the sweep quick while the rare
    // unmodified-store successes still show up.
    let budget = 500_000_000;
    let report = build_table(TimingModel::default(), ChannelParams::default(), budget, 7);
    print!("{}", report.to_csv());

    let leaking = report.rows.iter().filter(|r| r.lockinc_rate > 0.0).count();
    eprintln!("\n{} of {} revisions leak under this timing model", leaking, report.rows.len());
    for r in report.rows.iter().filter(|r| r.vulnerable) {
        eprintln!(
            "  {}: lockinc/unmodified ratio {:.0}x",
            r.mc_version,
            r.lockinc_rate / r.unmodified_rate.max(f64::MIN_POSITIVE)
        );
    }
}
