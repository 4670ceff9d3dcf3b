//! The receive side in isolation: a 256-slot flush+reload probe with
//! Gaussian timing noise. Calibrate a threshold from hit/miss samples, then
//! push bytes through cache state alone and count decode errors.
//!
//! Run with: cargo run --release --example covert_channel

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbleak::channel::{
    calibrate_threshold, decode_byte, measure_reload, ChannelParams, ProbeArray, TimingOracle,
};
use sbleak::machine::Cache;

fn main() {
    let params = ChannelParams::default();
    let array = ProbeArray::new(0x100_0000, params.stride).unwrap();
    let mut oracle = TimingOracle::new(&params, 42).unwrap();

    let threshold = calibrate_threshold(&oracle.sample_hits(512), &oracle.sample_misses(512))
        .expect("hit and miss populations separate cleanly");
    println!(
        "channel: hits ~N({}, {}), misses ~N({}, {}), threshold {:.1}",
        params.hit_mean, params.noise_sigma, params.miss_mean, params.noise_sigma, threshold
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 10_000;
    let mut correct = 0u32;
    let mut ambiguous = 0u32;
    for _ in 0..trials {
        let sent: u8 = rng.gen();

        // Transmit: exactly one probe line becomes cached.
        let mut cache = Cache::new();
        cache.touch_read(array.slot_addr(sent));

        // Receive: time all 256 slots, decode below-threshold.
        let latencies = measure_reload(&array, &cache, &mut oracle);
        match decode_byte(&latencies, threshold) {
            Some(d) => {
                correct += (d.value == sent) as u32;
                ambiguous += d.ambiguous as u32;
            }
            None => {}
        }
    }

    println!(
        "{correct}/{trials} decoded correctly ({:.3}%), {ambiguous} ambiguous",
        100.0 * correct as f64 / trials as f64
    );
}
