//! A miniature SASS-like instruction set.
//!
//! Only the control-flow relevant part of the Kepler/Maxwell ISA is modeled:
//! `SSY`, predicated `BRA`, the `.S` pop-bit, and enough integer/float
//! arithmetic to express counted loops. Addresses are instruction indices,
//! not byte offsets.

mod format;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use format::format_program;
pub use parse::parse_program;

/// Highest general purpose register index (`RZ` sits above it, as in SASS).
pub const MAX_REGISTERS: usize = 255;
/// Highest predicate register index (`PT` sits above it).
pub const MAX_PREDICATES: usize = 7;

/// A general purpose register operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reg {
    R(u8),
    /// Reads as zero, writes are discarded.
    Zero,
}

/// A predicate register operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pred {
    P(u8),
    /// Reads as true in every lane.
    True,
}

/// Register or immediate source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Src {
    Reg(Reg),
    Imm(i32),
}

/// `@P0` / `@!P0` guard on a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Guard {
    pub pred: Pred,
    pub negated: bool,
}

impl Guard {
    pub fn new(pred: Pred) -> Self {
        Guard {
            pred,
            negated: false,
        }
    }

    pub fn not(pred: Pred) -> Self {
        Guard {
            pred,
            negated: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Opcode {
    /// Push a SYNC token whose pc is `target`.
    Ssy { target: usize },
    /// Branch to `target`; lanes whose guard is false fall through.
    Bra { target: usize, guard: Option<Guard> },
    Nop,
    Iadd { dst: Reg, a: Reg, b: Src },
    /// `FADD32I`: float add with an immediate.
    FaddImm { dst: Reg, src: Reg, imm: f32 },
    /// `ISETP.LT.AND dst, PT, a, b, PT`.
    IsetpLt { dst: Pred, a: Reg, b: Src },
    Mov { dst: Reg, src: Src },
    /// `S2R dst, SR_CLOCKLO`: reads the warp cycle counter.
    Clock { dst: Reg },
    /// Records `src` into the per-thread timestamp slot selected by `slot`.
    StoreSlot { slot: Src, src: Reg },
    Exit,
}

impl Opcode {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Opcode::Ssy { .. } => "SSY",
            Opcode::Bra { .. } => "BRA",
            Opcode::Nop => "NOP",
            Opcode::Iadd { .. } => "IADD",
            Opcode::FaddImm { .. } => "FADD32I",
            Opcode::IsetpLt { .. } => "ISETP.LT.AND",
            Opcode::Mov { .. } => "MOV",
            Opcode::Clock { .. } => "S2R",
            Opcode::StoreSlot { .. } => "STSLOT",
            Opcode::Exit => "EXIT",
        }
    }

    pub fn target(&self) -> Option<usize> {
        match *self {
            Opcode::Ssy { target } | Opcode::Bra { target, .. } => Some(target),
            _ => None,
        }
    }

    /// Whether this opcode may carry the `.S` pop-bit.
    pub fn accepts_pop_bit(&self) -> bool {
        !matches!(self, Opcode::Ssy { .. } | Opcode::Bra { .. } | Opcode::Exit)
    }

    fn registers(&self) -> Vec<Reg> {
        let src = |s: &Src| match s {
            Src::Reg(r) => Some(*r),
            Src::Imm(_) => None,
        };
        match self {
            Opcode::Iadd { dst, a, b } => [Some(*dst), Some(*a), src(b)].into_iter().flatten().collect(),
            Opcode::FaddImm { dst, src, .. } => vec![*dst, *src],
            Opcode::IsetpLt { a, b, .. } => [Some(*a), src(b)].into_iter().flatten().collect(),
            Opcode::Mov { dst, src: s } => [Some(*dst), src(s)].into_iter().flatten().collect(),
            Opcode::Clock { dst } => vec![*dst],
            Opcode::StoreSlot { slot, src: s } => [src(slot), Some(*s)].into_iter().flatten().collect(),
            _ => Vec::new(),
        }
    }

    fn predicates(&self) -> Vec<Pred> {
        match self {
            Opcode::IsetpLt { dst, .. } => vec![*dst],
            Opcode::Bra { guard: Some(g), .. } => vec![g.pred],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instruction {
    pub opcode: Opcode,
    /// The `.S` suffix: pop the synchronization stack before executing.
    pub pop_bit: bool,
    pub address: usize,
}

/// A validated, immutable program.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    registers: usize,
    predicates: usize,
}

impl Program {
    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn get(&self, pc: usize) -> Option<&Instruction> {
        self.instructions.get(pc)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    /// Size of the general purpose register file.
    pub fn register_count(&self) -> usize {
        self.registers
    }

    pub fn predicate_count(&self) -> usize {
        self.predicates
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("line {line}: {kind}")]
    Line { line: usize, kind: ParseErrorKind },
    #[error("program has no EXIT instruction")]
    MissingExit,
    #[error("line {line}: EXIT must be the final instruction and appear exactly once")]
    MisplacedExit { line: usize },
}

impl ProgramError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ProgramError::Line { line, .. } | ProgramError::MisplacedExit { line } => Some(*line),
            ProgramError::MissingExit => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("label `{0}` is not followed by an instruction")]
    DanglingLabel(String),
    #[error("register `{name}` is outside the declared file of {size}")]
    RegisterOutOfRange { name: String, size: usize },
    #[error("malformed operand `{0}`")]
    BadOperand(String),
    #[error("`{mnemonic}` expects {expected} operands, found {found}")]
    OperandCount {
        mnemonic: String,
        expected: &'static str,
        found: usize,
    },
    #[error("`{0}` cannot carry the .S pop-bit")]
    PopBitNotAllowed(String),
    #[error("only BRA may be predicated")]
    PredicateNotAllowed,
    #[error("malformed directive `{0}`")]
    BadDirective(String),
}

/// Branch target as seen by the builder, resolved at [`ProgramBuilder::build`].
#[derive(Clone, Debug)]
enum Pending {
    None,
    Label(String),
}

/// Incremental program construction with forward label references.
///
/// Used both by the text parser and by the kernel constructors.
#[derive(Default, Clone, Debug)]
pub struct ProgramBuilder {
    instructions: Vec<(Instruction, Pending, usize)>,
    labels: BTreeMap<String, (usize, usize)>,
    registers: Option<usize>,
    predicates: Option<usize>,
    line: usize,
    error: Option<ProgramError>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Source line attached to subsequent errors (parser use).
    pub(crate) fn at_line(&mut self, line: usize) -> &mut Self {
        self.line = line;
        self
    }

    fn fail(&mut self, kind: ParseErrorKind) {
        if self.error.is_none() {
            self.error = Some(ProgramError::Line {
                line: self.line,
                kind,
            });
        }
    }

    pub fn registers(&mut self, n: usize) -> &mut Self {
        self.registers = Some(n);
        self
    }

    pub fn predicates(&mut self, n: usize) -> &mut Self {
        self.predicates = Some(n);
        self
    }

    /// Binds `name` to the next instruction.
    pub fn label(&mut self, name: &str) -> &mut Self {
        let at = self.instructions.len();
        if self.labels.insert(name.to_string(), (at, self.line)).is_some() {
            self.fail(ParseErrorKind::DuplicateLabel(name.to_string()));
        }
        self
    }

    fn push_raw(&mut self, opcode: Opcode, pop_bit: bool, pending: Pending) -> &mut Self {
        if pop_bit && !opcode.accepts_pop_bit() {
            self.fail(ParseErrorKind::PopBitNotAllowed(opcode.mnemonic().to_string()));
        }
        let address = self.instructions.len();
        self.instructions.push((
            Instruction {
                opcode,
                pop_bit,
                address,
            },
            pending,
            self.line,
        ));
        self
    }

    /// Appends a non-branching instruction.
    pub fn op(&mut self, opcode: Opcode) -> &mut Self {
        self.push_raw(opcode, false, Pending::None)
    }

    /// Appends a carrier instruction (pop-bit set).
    pub fn op_sync(&mut self, opcode: Opcode) -> &mut Self {
        self.push_raw(opcode, true, Pending::None)
    }

    pub fn ssy(&mut self, label: &str) -> &mut Self {
        self.push_raw(
            Opcode::Ssy { target: 0 },
            false,
            Pending::Label(label.to_string()),
        )
    }

    pub fn bra(&mut self, guard: Option<Guard>, label: &str) -> &mut Self {
        self.push_raw(
            Opcode::Bra { target: 0, guard },
            false,
            Pending::Label(label.to_string()),
        )
    }

    pub(crate) fn error(&mut self, kind: ParseErrorKind) -> &mut Self {
        self.fail(kind);
        self
    }

    pub fn build(&self) -> Result<Program, ProgramError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let len = self.instructions.len();
        for (name, &(at, line)) in &self.labels {
            if at >= len {
                return Err(ProgramError::Line {
                    line,
                    kind: ParseErrorKind::DanglingLabel(name.clone()),
                });
            }
        }

        let mut instructions = Vec::with_capacity(len);
        for (ins, pending, line) in &self.instructions {
            let mut ins = *ins;
            if let Pending::Label(name) = pending {
                let &(target, _) = self.labels.get(name).ok_or_else(|| ProgramError::Line {
                    line: *line,
                    kind: ParseErrorKind::UnresolvedLabel(name.clone()),
                })?;
                match &mut ins.opcode {
                    Opcode::Ssy { target: t } | Opcode::Bra { target: t, .. } => *t = target,
                    _ => unreachable!("only SSY/BRA carry label targets"),
                }
            }
            instructions.push(ins);
        }

        let exits: Vec<usize> = instructions
            .iter()
            .enumerate()
            .filter(|(_, i)| i.opcode == Opcode::Exit)
            .map(|(idx, _)| idx)
            .collect();
        match exits.as_slice() {
            [] => return Err(ProgramError::MissingExit),
            [only] if *only == len - 1 => {}
            _ => {
                let bad = exits.iter().find(|&&e| e != len - 1).copied().unwrap_or(exits[0]);
                return Err(ProgramError::MisplacedExit {
                    line: self.instructions[bad].2,
                });
            }
        }

        let used_regs = instructions
            .iter()
            .flat_map(|i| i.opcode.registers())
            .filter_map(|r| match r {
                Reg::R(n) => Some(n as usize + 1),
                Reg::Zero => None,
            })
            .max()
            .unwrap_or(0);
        let used_preds = instructions
            .iter()
            .flat_map(|i| i.opcode.predicates())
            .filter_map(|p| match p {
                Pred::P(n) => Some(n as usize + 1),
                Pred::True => None,
            })
            .max()
            .unwrap_or(0);
        let registers = self.registers.unwrap_or(used_regs.max(1));
        let predicates = self.predicates.unwrap_or(used_preds.max(1));

        for (ins, (_, _, line)) in instructions.iter().zip(&self.instructions) {
            for r in ins.opcode.registers() {
                if let Reg::R(n) = r {
                    if n as usize >= registers {
                        return Err(ProgramError::Line {
                            line: *line,
                            kind: ParseErrorKind::RegisterOutOfRange {
                                name: r.to_string(),
                                size: registers,
                            },
                        });
                    }
                }
            }
            for p in ins.opcode.predicates() {
                if let Pred::P(n) = p {
                    if n as usize >= predicates {
                        return Err(ProgramError::Line {
                            line: *line,
                            kind: ParseErrorKind::RegisterOutOfRange {
                                name: p.to_string(),
                                size: predicates,
                            },
                        });
                    }
                }
            }
        }

        Ok(Program {
            instructions,
            labels: self
                .labels
                .iter()
                .map(|(k, &(at, _))| (k.clone(), at))
                .collect(),
            registers,
            predicates,
        })
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::R(n) => write!(f, "R{n}"),
            Reg::Zero => f.write_str("RZ"),
        }
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pred::P(n) => write!(f, "P{n}"),
            Pred::True => f.write_str("PT"),
        }
    }
}

impl std::str::FromStr for Reg {
    type Err = ParseErrorKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("RZ") {
            return Ok(Reg::Zero);
        }
        s.strip_prefix('R')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|&n| (n as usize) < MAX_REGISTERS && !s[1..].starts_with('+'))
            .map(Reg::R)
            .ok_or_else(|| ParseErrorKind::BadOperand(s.to_string()))
    }
}

impl std::str::FromStr for Pred {
    type Err = ParseErrorKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("PT") {
            return Ok(Pred::True);
        }
        s.strip_prefix('P')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|&n| (n as usize) < MAX_PREDICATES && !s[1..].starts_with('+'))
            .map(Pred::P)
            .ok_or_else(|| ParseErrorKind::BadOperand(s.to_string()))
    }
}
