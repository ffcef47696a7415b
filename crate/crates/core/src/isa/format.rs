use std::collections::BTreeMap;
use std::fmt::{self, Write};

use super::{Instruction, Opcode, Program, Src};

/// Renders a program as assembly text accepted by [`super::parse_program`].
///
/// Branch targets are printed as label names. Targets without a label get a
/// synthetic `L<index>` name.
pub fn format_program(p: &Program) -> String {
    let mut names: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, &at) in p.labels() {
        names.entry(at).or_default().push(name.clone());
    }
    // Synthetic names must not collide with user labels.
    for ins in p.instructions() {
        if let Some(t) = ins.opcode.target() {
            names.entry(t).or_insert_with(|| {
                let mut name = format!("L{t}");
                while p.labels().contains_key(&name) {
                    name.push('_');
                }
                vec![name]
            });
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, ".regs {}", p.register_count());
    let _ = writeln!(out, ".preds {}", p.predicate_count());
    for ins in p.instructions() {
        if let Some(labels) = names.get(&ins.address) {
            for l in labels {
                let _ = writeln!(out, "{l}:");
            }
        }
        let target_name = ins
            .opcode
            .target()
            .map(|t| names[&t][0].as_str())
            .unwrap_or_default();
        let _ = writeln!(out, "        {}", Rendered { ins, target_name });
    }
    out
}

struct Rendered<'a> {
    ins: &'a Instruction,
    target_name: &'a str,
}

struct Imm(Src);

impl fmt::Display for Imm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Src::Reg(r) => write!(f, "{r}"),
            Src::Imm(v) if v < 0 => write!(f, "-0x{:x}", -(v as i64)),
            Src::Imm(v) => write!(f, "0x{v:x}"),
        }
    }
}

impl fmt::Display for Rendered<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins = self.ins;
        if let Opcode::Bra { guard: Some(g), .. } = ins.opcode {
            write!(f, "@{}{} ", if g.negated { "!" } else { "" }, g.pred)?;
        }
        f.write_str(ins.opcode.mnemonic())?;
        if ins.pop_bit {
            f.write_str(".S")?;
        }
        match ins.opcode {
            Opcode::Ssy { .. } | Opcode::Bra { .. } => write!(f, " {}", self.target_name),
            Opcode::Nop | Opcode::Exit => Ok(()),
            Opcode::Iadd { dst, a, b } => write!(f, " {dst}, {a}, {}", Imm(b)),
            Opcode::FaddImm { dst, src, imm } => write!(f, " {dst}, {src}, {imm:?}"),
            Opcode::IsetpLt { dst, a, b } => write!(f, " {dst}, PT, {a}, {}, PT", Imm(b)),
            Opcode::Mov { dst, src } => write!(f, " {dst}, {}", Imm(src)),
            Opcode::Clock { dst } => write!(f, " {dst}, SR_CLOCKLO"),
            Opcode::StoreSlot { slot, src } => write!(f, " [{}], {src}", Imm(slot)),
        }
    }
}

/// Single-instruction rendering with numeric targets, used in traces.
pub(crate) fn render_instruction(ins: &Instruction) -> String {
    let target = ins.opcode.target().map(|t| format!("{t:#06x}")).unwrap_or_default();
    Rendered {
        ins,
        target_name: &target,
    }
    .to_string()
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_instruction(self))
    }
}
