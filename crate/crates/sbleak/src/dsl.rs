//! Attack-program DSL.
//!
//! Programs are tiny straight-line instruction sequences over named pages,
//! written in `.sbl` text form. The grammar, one construct per line:
//!
//! ```text
//! # comment                      comments run to end of line
//! page A                         declare a user-accessible data page
//! fault B us                     declare a faulting page (us | pk | np)
//! probe P                        declare the covert-channel probe base
//! policy abort                   optional; default is "policy suppress"
//!
//! set r1, 0x41                   reg <- immediate
//! store A+0x123, r1, 8           mem[addr] <- low bytes of reg (size 1..=8)
//! load r2, B+0x123, 1            reg <- mem[addr] (size 1..=8)
//! flush A+0x123                  clflush the line containing addr
//! lockinc A+0x123                locked read-modify-write on addr
//! fence                          drain the store buffer
//! encode P, r2                   touch probe slot indexed by low byte of reg
//! ```
//!
//! Addresses are `symbol` or `symbol+0x<hex>` (decimal also accepted);
//! registers are `r0`..`r15`. Symbols must be declared before use. At most
//! one load may address a fault-declared page, and every `encode` must be
//! data-dependent on the destination register of an earlier `load` — those
//! two rules are what make a program a well-formed single-leak attempt.
//!
//! Parsing and serialization are exact inverses: for any `AttackProgram`
//! value, `parse_program(&serialize_program(&p)) == p`.

use thiserror::Error;

use crate::machine::PrepOp;

/// Page offset used by the canonical attack programs.
pub const CANONICAL_OFFSET: u64 = 0x123;
/// Store width of the canonical programs (widest supported).
pub const CANONICAL_STORE_SIZE: u8 = 8;
/// Load width of the canonical programs (a single leaked byte).
pub const CANONICAL_LOAD_SIZE: u8 = 1;

/// How the faulting page is protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultClass {
    /// Supervisor page: user access takes a US fault.
    US,
    /// Protection-key-denied page.
    PK,
    /// Non-present page.
    NP,
}

impl FaultClass {
    pub fn mnemonic(self) -> &'static str {
        match self {
            FaultClass::US => "us",
            FaultClass::PK => "pk",
            FaultClass::NP => "np",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        match s {
            "us" => Some(FaultClass::US),
            "pk" => Some(FaultClass::PK),
            "np" => Some(FaultClass::NP),
            _ => None,
        }
    }
}

impl std::fmt::Display for FaultClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// General-purpose register index, `r0`..`r15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Option<Self> {
        (index < 16).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for Reg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// What kind of region a symbol names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    /// Ordinary user-accessible data page.
    Page,
    /// Page set up to fault with the given class.
    Fault(FaultClass),
    /// Base of the 256-slot probe array.
    Probe,
}

/// One symbol declaration, in program order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolDecl {
    pub name: String,
    pub kind: SymbolKind,
}

/// `base + offset` address expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddrExpr {
    pub base: String,
    pub offset: u64,
}

impl AddrExpr {
    pub fn new(base: impl Into<String>, offset: u64) -> Self {
        AddrExpr { base: base.into(), offset }
    }
}

impl std::fmt::Display for AddrExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.offset == 0 {
            f.write_str(&self.base)
        } else {
            write!(f, "{}+{:#x}", self.base, self.offset)
        }
    }
}

/// One instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    /// `set rN, imm`
    SetReg { reg: Reg, value: u64 },
    /// `store addr, rN, size`
    Store { addr: AddrExpr, src: Reg, size: u8 },
    /// `load rN, addr, size`
    Load { dest: Reg, addr: AddrExpr, size: u8 },
    /// `flush addr`
    Flush { addr: AddrExpr },
    /// `lockinc addr`
    LockInc { addr: AddrExpr },
    /// `fence`
    Fence,
    /// `encode P, rN`
    Encode { probe: String, index: Reg },
}

/// What the harness does when the program's load faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultPolicy {
    /// Suppress the fault and carry on with the next attempt (default).
    #[default]
    SuppressAndContinue,
    /// The program runs inside a transaction that aborts on the fault.
    AbortTransaction,
}

/// A parsed attack program.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttackProgram {
    /// Symbol declarations in order of appearance.
    pub symbols: Vec<SymbolDecl>,
    pub instrs: Vec<Instr>,
    pub fault_policy: FaultPolicy,
}

impl AttackProgram {
    pub fn symbol(&self, name: &str) -> Option<&SymbolDecl> {
        self.symbols.iter().find(|s| s.name == name)
    }

    /// Rewrites the immediate of the first `set` instruction — the planted
    /// secret byte of a canonical program. Returns false when the program has
    /// no `set` to rewrite.
    pub fn plant_secret(&mut self, value: u64) -> bool {
        for instr in &mut self.instrs {
            if let Instr::SetReg { value: v, .. } = instr {
                *v = value;
                return true;
            }
        }
        false
    }
}

/// Parse failures, each tied to a 1-based source line.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: syntax error: {msg}")]
    SyntaxError { line: usize, msg: String },
    #[error("line {line}: unknown symbol `{name}`")]
    UnknownSymbol { line: usize, name: String },
    #[error("line {line}: more than one load addresses a fault page")]
    MultipleFaultingLoads { line: usize },
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::SyntaxError { line, msg: msg.into() }
}

fn parse_number(line: usize, s: &str) -> Result<u64, ParseError> {
    let s = s.trim();
    let parsed = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        s.parse::<u64>()
    };
    parsed.map_err(|_| syntax(line, format!("expected a number, got `{s}`")))
}

fn parse_reg(line: usize, s: &str) -> Result<Reg, ParseError> {
    let s = s.trim();
    s.strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .and_then(Reg::new)
        .ok_or_else(|| syntax(line, format!("expected a register r0..r15, got `{s}`")))
}

fn parse_size(line: usize, s: &str) -> Result<u8, ParseError> {
    let n = parse_number(line, s)?;
    if (1..=8).contains(&n) {
        Ok(n as u8)
    } else {
        Err(syntax(line, format!("size {n} outside 1..=8")))
    }
}

fn valid_symbol_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct LineParser<'a> {
    program: AttackProgram,
    text: &'a str,
    fault_loads: usize,
    loaded_regs: Vec<Reg>,
    policy_set: bool,
}

impl<'a> LineParser<'a> {
    fn addr(&self, line: usize, s: &str) -> Result<AddrExpr, ParseError> {
        let s = s.trim();
        let (base, offset) = match s.split_once('+') {
            Some((b, off)) => (b.trim(), parse_number(line, off)?),
            None => (s, 0),
        };
        if !valid_symbol_name(base) {
            return Err(syntax(line, format!("bad address expression `{s}`")));
        }
        let decl = self
            .program
            .symbol(base)
            .ok_or_else(|| ParseError::UnknownSymbol { line, name: base.to_string() })?;
        if decl.kind == SymbolKind::Probe {
            return Err(syntax(line, format!("`{base}` is a probe symbol; address it with encode")));
        }
        Ok(AddrExpr::new(base, offset))
    }

    fn declare(&mut self, line: usize, name: &str, kind: SymbolKind) -> Result<(), ParseError> {
        if !valid_symbol_name(name) {
            return Err(syntax(line, format!("bad symbol name `{name}`")));
        }
        if self.program.symbol(name).is_some() {
            return Err(syntax(line, format!("symbol `{name}` already declared")));
        }
        self.program.symbols.push(SymbolDecl { name: name.to_string(), kind });
        Ok(())
    }

    fn parse(mut self) -> Result<AttackProgram, ParseError> {
        for (idx, raw) in self.text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (word, rest) = match stripped.split_once(char::is_whitespace) {
                Some((w, r)) => (w, r.trim()),
                None => (stripped, ""),
            };
            let args: Vec<&str> = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(str::trim).collect()
            };
            self.line(line, word, rest, &args)?;
        }
        Ok(self.program)
    }

    fn line(&mut self, line: usize, word: &str, rest: &str, args: &[&str]) -> Result<(), ParseError> {
        let argc = |want: usize| -> Result<(), ParseError> {
            if args.len() == want {
                Ok(())
            } else {
                Err(syntax(line, format!("`{word}` expects {want} operand(s), got {}", args.len())))
            }
        };
        match word {
            "page" => {
                argc(1)?;
                self.declare(line, args[0], SymbolKind::Page)
            }
            "fault" => {
                // `fault B us` — operands separated by whitespace, not commas.
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(syntax(line, "`fault` expects a symbol and a class (us | pk | np)"));
                }
                let class = FaultClass::from_mnemonic(parts[1])
                    .ok_or_else(|| syntax(line, format!("unknown fault class `{}`", parts[1])))?;
                self.declare(line, parts[0], SymbolKind::Fault(class))
            }
            "probe" => {
                argc(1)?;
                self.declare(line, args[0], SymbolKind::Probe)
            }
            "policy" => {
                argc(1)?;
                if self.policy_set {
                    return Err(syntax(line, "duplicate policy line"));
                }
                self.policy_set = true;
                self.program.fault_policy = match args[0] {
                    "suppress" => FaultPolicy::SuppressAndContinue,
                    "abort" => FaultPolicy::AbortTransaction,
                    other => return Err(syntax(line, format!("unknown policy `{other}`"))),
                };
                Ok(())
            }
            "set" => {
                argc(2)?;
                let reg = parse_reg(line, args[0])?;
                let value = parse_number(line, args[1])?;
                self.program.instrs.push(Instr::SetReg { reg, value });
                Ok(())
            }
            "store" => {
                argc(3)?;
                let addr = self.addr(line, args[0])?;
                let src = parse_reg(line, args[1])?;
                let size = parse_size(line, args[2])?;
                self.program.instrs.push(Instr::Store { addr, src, size });
                Ok(())
            }
            "load" => {
                argc(3)?;
                let dest = parse_reg(line, args[0])?;
                let addr = self.addr(line, args[1])?;
                let size = parse_size(line, args[2])?;
                if matches!(self.program.symbol(&addr.base).map(|d| d.kind), Some(SymbolKind::Fault(_))) {
                    self.fault_loads += 1;
                    if self.fault_loads > 1 {
                        return Err(ParseError::MultipleFaultingLoads { line });
                    }
                }
                self.loaded_regs.push(dest);
                self.program.instrs.push(Instr::Load { dest, addr, size });
                Ok(())
            }
            "flush" => {
                argc(1)?;
                let addr = self.addr(line, args[0])?;
                self.program.instrs.push(Instr::Flush { addr });
                Ok(())
            }
            "lockinc" => {
                argc(1)?;
                let addr = self.addr(line, args[0])?;
                self.program.instrs.push(Instr::LockInc { addr });
                Ok(())
            }
            "fence" => {
                argc(0)?;
                self.program.instrs.push(Instr::Fence);
                Ok(())
            }
            "encode" => {
                argc(2)?;
                let name = args[0];
                let decl = self
                    .program
                    .symbol(name)
                    .ok_or_else(|| ParseError::UnknownSymbol { line, name: name.to_string() })?;
                if decl.kind != SymbolKind::Probe {
                    return Err(syntax(line, format!("encode target `{name}` is not a probe symbol")));
                }
                let index = parse_reg(line, args[1])?;
                if !self.loaded_regs.contains(&index) {
                    return Err(syntax(
                        line,
                        format!("encode register {index} is not the destination of an earlier load"),
                    ));
                }
                self.program.instrs.push(Instr::Encode { probe: name.to_string(), index });
                Ok(())
            }
            other => Err(syntax(line, format!("unknown mnemonic `{other}`"))),
        }
    }
}

/// Parses `.sbl` text into a program. Empty input yields the empty program.
pub fn parse_program(text: &str) -> Result<AttackProgram, ParseError> {
    LineParser {
        program: AttackProgram::default(),
        text,
        fault_loads: 0,
        loaded_regs: Vec::new(),
        policy_set: false,
    }
    .parse()
}

/// Renders a program in canonical `.sbl` text. `parse_program` inverts this
/// exactly.
pub fn serialize_program(p: &AttackProgram) -> String {
    let mut out = String::new();
    for decl in &p.symbols {
        match decl.kind {
            SymbolKind::Page => out.push_str(&format!("page {}\n", decl.name)),
            SymbolKind::Fault(class) => out.push_str(&format!("fault {} {}\n", decl.name, class)),
            SymbolKind::Probe => out.push_str(&format!("probe {}\n", decl.name)),
        }
    }
    if p.fault_policy == FaultPolicy::AbortTransaction {
        out.push_str("policy abort\n");
    }
    if !out.is_empty() && !p.instrs.is_empty() {
        out.push('\n');
    }
    for instr in &p.instrs {
        let line = match instr {
            Instr::SetReg { reg, value } => format!("set {reg}, {value:#x}"),
            Instr::Store { addr, src, size } => format!("store {addr}, {src}, {size}"),
            Instr::Load { dest, addr, size } => format!("load {dest}, {addr}, {size}"),
            Instr::Flush { addr } => format!("flush {addr}"),
            Instr::LockInc { addr } => format!("lockinc {addr}"),
            Instr::Fence => "fence".to_string(),
            Instr::Encode { probe, index } => format!("encode {probe}, {index}"),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// The canonical single-leak program: plant a byte, store it to page `A`,
/// prepare the line per `prep`, then read the same page offset through the
/// faulting page `B` and encode the transiently forwarded byte into probe
/// array `P`. The planted placeholder is 0x41; experiments rewrite it per
/// attempt via [`AttackProgram::plant_secret`].
pub fn canonical_msbds_program(prep: PrepOp, fault: FaultClass) -> AttackProgram {
    let secret = Reg::new(1).unwrap();
    let dest = Reg::new(2).unwrap();
    let mut instrs = vec![
        Instr::SetReg { reg: secret, value: 0x41 },
        Instr::Store {
            addr: AddrExpr::new("A", CANONICAL_OFFSET),
            src: secret,
            size: CANONICAL_STORE_SIZE,
        },
    ];
    match prep {
        PrepOp::None => {}
        PrepOp::Clflush => instrs.push(Instr::Flush { addr: AddrExpr::new("A", CANONICAL_OFFSET) }),
        PrepOp::LockInc => instrs.push(Instr::LockInc { addr: AddrExpr::new("A", CANONICAL_OFFSET) }),
    }
    instrs.push(Instr::Load {
        dest,
        addr: AddrExpr::new("B", CANONICAL_OFFSET),
        size: CANONICAL_LOAD_SIZE,
    });
    instrs.push(Instr::Encode { probe: "P".to_string(), index: dest });
    AttackProgram {
        symbols: vec![
            SymbolDecl { name: "A".to_string(), kind: SymbolKind::Page },
            SymbolDecl { name: "B".to_string(), kind: SymbolKind::Fault(fault) },
            SymbolDecl { name: "P".to_string(), kind: SymbolKind::Probe },
        ],
        instrs,
        fault_policy: FaultPolicy::SuppressAndContinue,
    }
}
