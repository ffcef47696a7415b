use super::{Guard, Opcode, ParseErrorKind, Pred, Program, ProgramBuilder, ProgramError, Src};

/// Parses assembly text into a validated [`Program`].
///
/// One statement per line: an optional `label:` prefix, an optional `@P0` /
/// `@!P0` guard (BRA only), a mnemonic with an optional `.S` pop-bit suffix
/// and comma separated operands. `#` and `;` start a comment. `.regs N` and
/// `.preds N` declare the register file sizes; otherwise they are inferred.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let mut b = ProgramBuilder::new();
    for (idx, raw) in text.lines().enumerate() {
        b.at_line(idx + 1);
        let line = match raw.find(['#', ';']) {
            Some(cut) => &raw[..cut],
            None => raw,
        };
        let mut rest = line.trim();
        if rest.is_empty() {
            continue;
        }

        if rest.starts_with(".regs") || rest.starts_with(".preds") {
            directive(&mut b, rest);
            continue;
        }

        while let Some((name, tail)) = split_label(rest) {
            b.label(name);
            rest = tail.trim_start();
        }
        if rest.is_empty() {
            continue;
        }

        if let Err(kind) = statement(&mut b, rest) {
            b.error(kind);
        }
    }
    b.build()
}

fn directive(b: &mut ProgramBuilder, text: &str) {
    let mut parts = text.split_whitespace();
    let name = parts.next().unwrap_or_default();
    let value = parts.next().and_then(|v| v.parse::<usize>().ok());
    match (name, value, parts.next()) {
        (".regs", Some(n), None) if n <= super::MAX_REGISTERS => {
            b.registers(n);
        }
        (".preds", Some(n), None) if n <= super::MAX_PREDICATES => {
            b.predicates(n);
        }
        _ => {
            b.error(ParseErrorKind::BadDirective(text.to_string()));
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn split_label(s: &str) -> Option<(&str, &str)> {
    let (head, tail) = s.split_once(':')?;
    let head = head.trim();
    is_ident(head).then_some((head, tail))
}

fn statement(b: &mut ProgramBuilder, text: &str) -> Result<(), ParseErrorKind> {
    let (guard, text) = match text.strip_prefix('@') {
        Some(tail) => {
            let (g, rest) = tail.split_once(char::is_whitespace).ok_or_else(|| {
                ParseErrorKind::BadOperand(format!("@{tail}"))
            })?;
            let guard = match g.strip_prefix('!') {
                Some(p) => Guard::not(p.parse()?),
                None => Guard::new(g.parse()?),
            };
            (Some(guard), rest.trim_start())
        }
        None => (None, text),
    };

    let (mnemonic, operands) = match text.split_once(char::is_whitespace) {
        Some((m, ops)) => (m, ops.trim()),
        None => (text, ""),
    };
    let ops: Vec<&str> = if operands.is_empty() {
        Vec::new()
    } else {
        operands.split(',').map(str::trim).collect()
    };

    let upper = mnemonic.to_ascii_uppercase();
    let (base, pop_bit) = match upper.strip_suffix(".S") {
        Some(base) => (base, true),
        None => (upper.as_str(), false),
    };

    let count = |expected: &'static str, ok: bool| -> Result<(), ParseErrorKind> {
        if ok {
            Ok(())
        } else {
            Err(ParseErrorKind::OperandCount {
                mnemonic: mnemonic.to_string(),
                expected,
                found: ops.len(),
            })
        }
    };

    if guard.is_some() && base != "BRA" {
        return Err(ParseErrorKind::PredicateNotAllowed);
    }

    let opcode = match base {
        "SSY" => {
            count("1", ops.len() == 1)?;
            label_operand(ops[0])?;
            if pop_bit {
                return Err(ParseErrorKind::PopBitNotAllowed("SSY".into()));
            }
            b.ssy(ops[0]);
            return Ok(());
        }
        "BRA" => {
            count("1", ops.len() == 1)?;
            label_operand(ops[0])?;
            if pop_bit {
                return Err(ParseErrorKind::PopBitNotAllowed("BRA".into()));
            }
            b.bra(guard, ops[0]);
            return Ok(());
        }
        "NOP" => {
            count("0", ops.is_empty())?;
            Opcode::Nop
        }
        "EXIT" => {
            count("0", ops.is_empty())?;
            Opcode::Exit
        }
        "IADD" => {
            count("3", ops.len() == 3)?;
            Opcode::Iadd {
                dst: ops[0].parse()?,
                a: ops[1].parse()?,
                b: src(ops[2])?,
            }
        }
        "FADD32I" => {
            count("3", ops.len() == 3)?;
            Opcode::FaddImm {
                dst: ops[0].parse()?,
                src: ops[1].parse()?,
                imm: ops[2]
                    .parse::<f32>()
                    .map_err(|_| ParseErrorKind::BadOperand(ops[2].to_string()))?,
            }
        }
        "ISETP.LT.AND" | "ISETP.LT" => match ops.len() {
            3 => Opcode::IsetpLt {
                dst: ops[0].parse()?,
                a: ops[1].parse()?,
                b: src(ops[2])?,
            },
            5 => {
                for combiner in [ops[1], ops[4]] {
                    if combiner.parse::<Pred>()? != Pred::True {
                        return Err(ParseErrorKind::BadOperand(combiner.to_string()));
                    }
                }
                Opcode::IsetpLt {
                    dst: ops[0].parse()?,
                    a: ops[2].parse()?,
                    b: src(ops[3])?,
                }
            }
            _ => {
                count("3 or 5", false)?;
                unreachable!()
            }
        },
        "MOV" | "MOV32I" => {
            count("2", ops.len() == 2)?;
            Opcode::Mov {
                dst: ops[0].parse()?,
                src: src(ops[1])?,
            }
        }
        "S2R" => {
            count("2", ops.len() == 2)?;
            if !matches!(
                ops[1].to_ascii_uppercase().as_str(),
                "SR_CLOCKLO" | "SR_CLOCKHI" | "SR_CLOCK"
            ) {
                return Err(ParseErrorKind::BadOperand(ops[1].to_string()));
            }
            Opcode::Clock {
                dst: ops[0].parse()?,
            }
        }
        "CLOCK" => {
            count("1", ops.len() == 1)?;
            Opcode::Clock {
                dst: ops[0].parse()?,
            }
        }
        "STSLOT" => {
            count("2", ops.len() == 2)?;
            let slot = ops[0]
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .unwrap_or(ops[0]);
            Opcode::StoreSlot {
                slot: src(slot.trim())?,
                src: ops[1].parse()?,
            }
        }
        _ => return Err(ParseErrorKind::UnknownMnemonic(mnemonic.to_string())),
    };

    if pop_bit {
        b.op_sync(opcode);
    } else {
        b.op(opcode);
    }
    Ok(())
}

fn label_operand(s: &str) -> Result<(), ParseErrorKind> {
    if is_ident(s) {
        Ok(())
    } else {
        Err(ParseErrorKind::BadOperand(s.to_string()))
    }
}

fn src(s: &str) -> Result<Src, ParseErrorKind> {
    if s.starts_with(['R', 'r']) {
        return Ok(Src::Reg(s.parse()?));
    }
    immediate(s).map(Src::Imm)
}

fn immediate(s: &str) -> Result<i32, ParseErrorKind> {
    let bad = || ParseErrorKind::BadOperand(s.to_string());
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    let magnitude: i64 = match digits
        .strip_prefix("0x")
        .or_else(|| digits.strip_prefix("0X"))
    {
        Some(hex) => i64::from_str_radix(hex, 16).map_err(|_| bad())?,
        None => digits.parse::<i64>().map_err(|_| bad())?,
    };
    let value = if neg { -magnitude } else { magnitude };
    if neg {
        i32::try_from(value).map_err(|_| bad())
    } else {
        // Hex literals may spell the full 32-bit pattern.
        u32::try_from(value).map(|v| v as i32).map_err(|_| bad())
    }
}
