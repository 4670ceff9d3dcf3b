//! Deterministic simulator of store-buffer data sampling on an Ice Lake
//! client core: a machine model with explicit store-buffer drain timing, a
//! tiny DSL for attack programs, a transient-execution engine, a noisy
//! flush+reload covert channel, a mutation fuzzer that rediscovers the
//! leaking variant, and a microcode/CPU-snapshot checker.

pub mod channel;
pub mod checker;
pub mod cli;
pub mod config;
pub mod dsl;
pub mod engine;
pub mod fuzzer;
pub mod machine;
pub mod rng;
