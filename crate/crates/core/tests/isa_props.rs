use proptest::prelude::*;
use warpdiv_core::isa::{format_program, parse_program, ParseErrorKind, ProgramError};

/// Random straight-line programs with labels on arbitrary instructions and
/// branches/SSYs to arbitrary labels.
fn program_text() -> impl Strategy<Value = String> {
    let stmt = prop_oneof![
        Just("NOP".to_string()),
        Just("NOP.S".to_string()),
        (0u8..8, 0u8..8, -40i32..40).prop_map(|(d, a, i)| format!("IADD R{d}, R{a}, {i}")),
        (0u8..8, 0u8..8, 0u8..8).prop_map(|(d, a, b)| format!("IADD.S R{d}, R{a}, R{b}")),
        (0u8..8, -1000.0f32..1000.0).prop_map(|(d, f)| format!("FADD32I R{d}, R{d}, {f}")),
        (0u8..3, 0u8..8, 0u8..8).prop_map(|(p, a, b)| format!("ISETP.LT.AND P{p}, PT, R{a}, R{b}, PT")),
        (0u8..8, any::<i32>()).prop_map(|(d, v)| format!("MOV R{d}, {v}")),
        (0u8..8).prop_map(|d| format!("S2R R{d}, SR_CLOCKLO")),
        (0u8..8, 0u8..8).prop_map(|(s, r)| format!("STSLOT [R{s}], R{r}")),
        Just("BRANCH".to_string()),
        Just("SSY".to_string()),
    ];
    (proptest::collection::vec((stmt, any::<bool>(), 0u8..3), 1..40), any::<u64>()).prop_map(
        |(stmts, seed)| {
            let n = stmts.len();
            let mut out = String::new();
            for (i, (s, labelled, guard)) in stmts.iter().enumerate() {
                // every third-ish target label, deterministic from the seed
                let target = ((seed >> (i % 60)) as usize + i * 7) % n;
                if *labelled || i == 0 {
                    out.push_str(&format!("l{i}: "));
                }
                let line = match s.as_str() {
                    "BRANCH" => match guard {
                        0 => format!("BRA t{target}"),
                        1 => format!("@P0 BRA t{target}"),
                        _ => format!("@!P1 BRA t{target}"),
                    },
                    "SSY" => format!("SSY t{target}"),
                    other => other.to_string(),
                };
                out.push_str(&line);
                out.push('\n');
            }
            // target labels live on their own lines before each instruction
            let mut with_targets = String::new();
            for (i, line) in out.lines().enumerate() {
                with_targets.push_str(&format!("t{i}:\n{line}\n"));
            }
            with_targets.push_str("EXIT\n");
            with_targets
        },
    )
}

proptest! {
    #[test]
    fn format_then_parse_is_identity(text in program_text()) {
        let p = parse_program(&text).unwrap();
        let again = parse_program(&format_program(&p)).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn targets_are_in_range(text in program_text()) {
        let p = parse_program(&text).unwrap();
        for ins in p.instructions() {
            if let Some(t) = ins.opcode.target() {
                prop_assert!(t < p.len());
            }
        }
    }

    #[test]
    fn shuffled_label_definitions_still_resolve(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        // labels defined in a permuted order; every reference must resolve to its definition
        let mut text = String::new();
        for (slot, &label) in perm.iter().enumerate() {
            text.push_str(&format!("x{label}: MOV R1, {slot}\n"));
        }
        for label in 0..6 {
            text.push_str(&format!("BRA x{label}\n"));
        }
        text.push_str("EXIT\n");
        let p = parse_program(&text).unwrap();
        for label in 0..6 {
            let bra = p.instructions()[6 + label];
            let expected = perm.iter().position(|&l| l == label).unwrap();
            prop_assert_eq!(bra.opcode.target(), Some(expected));
        }
    }
}

#[test]
fn label_after_last_instruction_is_dangling() {
    let err = parse_program("EXIT\nend:").unwrap_err();
    assert!(matches!(
        err,
        ProgramError::Line {
            kind: ParseErrorKind::DanglingLabel(_),
            line: 2
        }
    ));
}

#[test]
fn duplicate_labels_are_rejected() {
    let err = parse_program("a: NOP\na: NOP\nEXIT").unwrap_err();
    assert!(matches!(
        err,
        ProgramError::Line {
            kind: ParseErrorKind::DuplicateLabel(_),
            line: 2
        }
    ));
}

#[test]
fn operand_errors() {
    for (text, line) in [
        ("IADD R1, R2\nEXIT", 1),
        ("NOP\nMOV R1, banana\nEXIT", 2),
        ("NOP\nNOP\nBRA.S x\nx: EXIT", 3),
        ("S2R R1, SR_TID\nEXIT", 1),
        (".regs lots\nEXIT", 1),
    ] {
        let err = parse_program(text).unwrap_err();
        assert_eq!(err.line(), Some(line), "{text}: {err}");
    }
}
