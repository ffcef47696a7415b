//! The benchmark kernels and their per-thread loop bounds.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::cost::ArchProfile;
use crate::isa::{Guard, Opcode, Pred, Program, ProgramBuilder, Reg, Src};
use crate::mask::WARP_SIZE;
use crate::warp::LaunchConfig;

/// Per-iteration increment of the inner (or only) loop accumulator.
pub const INNER_INCREMENT: f32 = 1.3333;
/// Per-iteration increment of the outer loop accumulator.
pub const OUTER_INCREMENT: f32 = 2.3333;
/// Slot holding the post-unwind timestamp in the instrumented kernel.
/// In-loop timestamps use slots `1..=M`.
pub const POST_LOOP_SLOT: i32 = 33;

pub const ACCUMULATOR: Reg = Reg::R(0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum KernelId {
    #[serde(rename = "single")]
    SingleLoop,
    #[serde(rename = "double")]
    DoubleLoop,
    #[serde(rename = "instrumented")]
    SingleLoopInstrumented,
}

impl KernelId {
    pub const ALL: [KernelId; 3] = [
        KernelId::SingleLoop,
        KernelId::DoubleLoop,
        KernelId::SingleLoopInstrumented,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelId::SingleLoop => "single",
            KernelId::DoubleLoop => "double",
            KernelId::SingleLoopInstrumented => "instrumented",
        }
    }

    pub fn program(&self) -> Program {
        match self {
            KernelId::SingleLoop => single_loop_program(),
            KernelId::DoubleLoop => double_loop_program(),
            KernelId::SingleLoopInstrumented => instrumented_single_loop_program(),
        }
    }

    /// Registers that receive the per-thread loop bound at launch. The
    /// double loop uses the same bound for both loops.
    pub fn bound_registers(&self) -> &'static [Reg] {
        match self {
            KernelId::SingleLoop | KernelId::SingleLoopInstrumented => &[Reg::R(5)],
            KernelId::DoubleLoop => &[Reg::R(8), Reg::R(9)],
        }
    }

    /// Launch with every bound register set from `bounds`.
    pub fn launch(&self, bounds: &[u32; WARP_SIZE], profile: ArchProfile) -> LaunchConfig {
        let values = bounds.map(|b| b as i32);
        self.bound_registers()
            .iter()
            .fold(LaunchConfig::new(profile), |l, &r| l.with_register(r, values))
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("unknown kernel `{0}` (expected single, double or instrumented)")]
    UnknownKernel(String),
    #[error("divergent thread count {0} is outside 0..=31")]
    NOutOfRange(u32),
}

impl FromStr for KernelId {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single" | "single_loop" => Ok(KernelId::SingleLoop),
            "double" | "double_loop" => Ok(KernelId::DoubleLoop),
            "instrumented" | "single_loop_instrumented" | "single_instrumented" => {
                Ok(KernelId::SingleLoopInstrumented)
            }
            _ => Err(KernelError::UnknownKernel(s.to_string())),
        }
    }
}

/// Loop bounds for `n` divergent threads: the last `n` lanes count down
/// from 31, the rest keep the full 32.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundPattern {
    pub n: u32,
    pub bounds: [u32; WARP_SIZE],
}

pub fn bound_pattern(n: u32) -> Result<BoundPattern, KernelError> {
    if n > 31 {
        return Err(KernelError::NOutOfRange(n));
    }
    let mut bounds = [32u32; WARP_SIZE];
    for (tid, b) in bounds.iter_mut().enumerate() {
        let tid = tid as u32;
        if tid > 31 - n {
            *b = 63 - n - tid;
        }
    }
    Ok(BoundPattern { n, bounds })
}

fn lt(dst: Pred, a: Reg, b: Src) -> Opcode {
    Opcode::IsetpLt { dst, a, b }
}

fn p0() -> Option<Guard> {
    Some(Guard::new(Pred::P(0)))
}

/// Single loop: `for (i = 0; i < M; i++) acc += 1.3333`, with `M` in R5.
pub fn single_loop_program() -> Program {
    let (acc, i, m) = (ACCUMULATOR, Reg::R(4), Reg::R(5));
    ProgramBuilder::new()
        .registers(8)
        .predicates(1)
        .op(Opcode::Clock { dst: Reg::R(6) })
        .op(Opcode::Mov { dst: i, src: Src::Reg(Reg::Zero) })
        .op(lt(Pred::P(0), m, Src::Imm(1)))
        .ssy("done")
        .bra(p0(), "sync")
        .op(Opcode::Nop)
        .op(Opcode::Nop)
        .label("body")
        .op(Opcode::Iadd { dst: i, a: i, b: Src::Imm(1) })
        .op(Opcode::FaddImm { dst: acc, src: acc, imm: INNER_INCREMENT })
        .op(lt(Pred::P(0), i, Src::Reg(m)))
        .label("latch")
        .bra(p0(), "body")
        .label("sync")
        .op_sync(Opcode::Nop)
        .label("done")
        .op(Opcode::Clock { dst: Reg::R(7) })
        .op(Opcode::Exit)
        .build()
        .expect("single loop kernel is well formed")
}

/// Nested loops with outer bound in R8 and inner bound in R9. The inner
/// SSY is re-issued on every outer iteration.
pub fn double_loop_program() -> Program {
    let (acc, i, j, m, n) = (ACCUMULATOR, Reg::R(6), Reg::R(7), Reg::R(8), Reg::R(9));
    ProgramBuilder::new()
        .registers(12)
        .predicates(1)
        .op(Opcode::Clock { dst: Reg::R(10) })
        .op(lt(Pred::P(0), m, Src::Imm(1)))
        .ssy("outer_done")
        .bra(p0(), "outer_sync")
        .op(Opcode::Mov { dst: i, src: Src::Reg(Reg::Zero) })
        .label("outer")
        .op(lt(Pred::P(0), n, Src::Imm(1)))
        .op(Opcode::Mov { dst: j, src: Src::Reg(Reg::Zero) })
        .label("inner_ssy")
        .ssy("inner_done")
        .bra(p0(), "inner_sync")
        .label("inner")
        .op(Opcode::Iadd { dst: j, a: j, b: Src::Imm(1) })
        .op(Opcode::FaddImm { dst: acc, src: acc, imm: INNER_INCREMENT })
        .op(lt(Pred::P(0), j, Src::Reg(n)))
        .bra(p0(), "inner")
        .label("inner_sync")
        .op_sync(Opcode::Nop)
        .label("inner_done")
        .op(Opcode::Iadd { dst: i, a: i, b: Src::Imm(1) })
        .op(Opcode::FaddImm { dst: acc, src: acc, imm: OUTER_INCREMENT })
        .op(lt(Pred::P(0), i, Src::Reg(m)))
        .label("outer_latch")
        .bra(p0(), "outer")
        .label("outer_sync")
        .op_sync(Opcode::Nop)
        .label("outer_done")
        .op(Opcode::Clock { dst: Reg::R(11) })
        .op(Opcode::Exit)
        .build()
        .expect("double loop kernel is well formed")
}

/// Single loop with a timestamp stored every iteration (slot `i`) and one
/// after re-convergence (slot [`POST_LOOP_SLOT`]).
pub fn instrumented_single_loop_program() -> Program {
    let (acc, i, m, t_in, t_out) = (ACCUMULATOR, Reg::R(4), Reg::R(5), Reg::R(6), Reg::R(7));
    ProgramBuilder::new()
        .registers(8)
        .predicates(1)
        .op(Opcode::Mov { dst: i, src: Src::Reg(Reg::Zero) })
        .op(lt(Pred::P(0), m, Src::Imm(1)))
        .ssy("done")
        .bra(p0(), "sync")
        .label("body")
        .op(Opcode::Iadd { dst: i, a: i, b: Src::Imm(1) })
        .op(Opcode::FaddImm { dst: acc, src: acc, imm: INNER_INCREMENT })
        .op(Opcode::Clock { dst: t_in })
        .op(Opcode::StoreSlot { slot: Src::Reg(i), src: t_in })
        .op(lt(Pred::P(0), i, Src::Reg(m)))
        .label("latch")
        .bra(p0(), "body")
        .label("sync")
        .op_sync(Opcode::Nop)
        .label("done")
        .op(Opcode::Clock { dst: t_out })
        .op(Opcode::StoreSlot { slot: Src::Imm(POST_LOOP_SLOT), src: t_out })
        .op(Opcode::Exit)
        .build()
        .expect("instrumented kernel is well formed")
}
