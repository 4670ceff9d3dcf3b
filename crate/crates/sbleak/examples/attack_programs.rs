//! The attack DSL: parse a program from text, run one attempt against a
//! vulnerable machine, and show that the well-formedness rules catch broken
//! programs. Serialization is the exact inverse of parsing.
//!
//! Run with: cargo run --example attack_programs

use sbleak::dsl::{parse_program, serialize_program};
use sbleak::engine::{run_attempt, ExperimentSetup, MachineConfig};

const CANONICAL: &str = include_str!("programs/canonical_us_lockinc.sbl");

fn main() {
    let program = parse_program(CANONICAL).expect("the shipped program parses");
    println!("parsed {} symbols, {} instructions", program.symbols.len(), program.instrs.len());

    // Round trip: serialize, reparse, compare structurally.
    let text = serialize_program(&program);
    assert_eq!(parse_program(&text).unwrap(), program);
    println!("canonical text form:\n---\n{text}---\n");

    // One attempt on the earliest microcode: the load faults, yet the
    // planted byte shows up in the transient probe touches.
    let mut program = program;
    program.plant_secret(0x5a);
    let setup = ExperimentSetup::from_program(program, &MachineConfig::default()).unwrap();
    let mut machine = setup.machine().clone();
    let result = run_attempt(&mut machine, setup.program(), setup.bindings()).unwrap();
    println!("fault taken        {}", result.fault);
    println!("forwarded          {}", result.forwarded);
    println!("transient touches  {:02x?}", result.transient_touches);
    println!("registers intact   r2 = {:#x} (squashed)", machine.regs[2]);

    // Ill-formed inputs are rejected with line numbers.
    let broken = "page A\nfault B us\nprobe P\nload r2, B, 1\nload r3, B+0x40, 1\nencode P, r2\n";
    println!("\nsecond faulting load: {}", parse_program(broken).unwrap_err());
    let unknown = "page A\nprobe P\nload r2, Q, 1\nencode P, r2\n";
    println!("undeclared symbol:    {}", parse_program(unknown).unwrap_err());
}
