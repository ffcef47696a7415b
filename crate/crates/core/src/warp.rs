//! Warp state machine: predicated branches, SSY, and pop-bit unwinding over
//! a synchronization stack.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cost::{event_cost, ArchProfile, CostError, EventCounts, EventKind, SyncStack};
use crate::isa::{Guard, Instruction, Opcode, Pred, Program, Reg, Src};
use crate::mask::{LaneMask, WARP_SIZE};

/// Default cap on executed instructions per run.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenId {
    Sync,
    Div,
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenId::Sync => "SYNC",
            TokenId::Div => "DIV",
        })
    }
}

/// Synchronization stack entry. The hardware packs it into 64 bits, 32 of
/// them for the mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Token {
    pub mask: LaneMask,
    pub id: TokenId,
    pub pc: usize,
}

impl Token {
    pub fn sync(mask: LaneMask, pc: usize) -> Self {
        Token {
            mask,
            id: TokenId::Sync,
            pc,
        }
    }

    pub fn div(mask: LaneMask, pc: usize) -> Self {
        Token {
            mask,
            id: TokenId::Div,
            pc,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{{}, pc={}}}", self.id, self.mask, self.pc)
    }
}

/// A stack event together with the masks around it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Push {
        token: Token,
        active_before: LaneMask,
        active_after: LaneMask,
    },
    Pop {
        token: Token,
        active_before: LaneMask,
    },
    SpillStore,
    SpillLoad,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Push { token, .. } if token.is_div() => EventKind::DivPush,
            Event::Push { .. } => EventKind::SyncPush,
            Event::Pop { token, .. } if token.is_div() => EventKind::DivPop,
            Event::Pop { .. } => EventKind::SyncPop,
            Event::SpillStore => EventKind::SpillStore,
            Event::SpillLoad => EventKind::SpillLoad,
        }
    }

    fn from_spill(kind: EventKind) -> Event {
        match kind {
            EventKind::SpillStore => Event::SpillStore,
            EventKind::SpillLoad => Event::SpillLoad,
            other => unreachable!("stack emitted non-spill event {other}"),
        }
    }
}

/// An event stamped with the ordinal and pc of the instruction causing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoggedEvent {
    pub ordinal: u64,
    pub pc: usize,
    pub event: Event,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("pop-bit instruction at pc {pc} found an empty synchronization stack")]
    EmptyStackPop { pc: usize },
    #[error("program counter {pc} is outside the program")]
    PcOutOfRange { pc: usize },
    #[error("instruction budget of {budget} exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("EXIT reached with {depth} tokens still on the stack")]
    UnbalancedExit { depth: usize },
    #[error("EXIT reached with active mask {active}, launch mask was {launch}")]
    NotReconverged { active: LaneMask, launch: LaneMask },
    #[error("invalid launch: {0}")]
    Launch(String),
    #[error(transparent)]
    Profile(#[from] CostError),
}

/// Launch parameters of a single-warp run.
#[derive(Clone, Debug)]
pub struct LaunchConfig {
    pub registers: BTreeMap<Reg, [u32; WARP_SIZE]>,
    pub active_mask: LaneMask,
    pub profile: ArchProfile,
    pub budget: u64,
    pub record_trace: bool,
}

impl LaunchConfig {
    pub fn new(profile: ArchProfile) -> Self {
        LaunchConfig {
            registers: BTreeMap::new(),
            active_mask: LaneMask::ALL,
            profile,
            budget: DEFAULT_BUDGET,
            record_trace: false,
        }
    }

    pub fn with_register(mut self, reg: Reg, values: [i32; WARP_SIZE]) -> Self {
        self.registers.insert(reg, values.map(|v| v as u32));
        self
    }

    /// Sets a register by name (`R5`) from exactly 32 values.
    pub fn set_register(&mut self, name: &str, values: &[i64]) -> Result<(), ModelError> {
        let reg: Reg = name
            .parse()
            .map_err(|_| ModelError::Launch(format!("bad register name `{name}`")))?;
        if reg == Reg::Zero {
            return Err(ModelError::Launch("RZ cannot be initialized".into()));
        }
        let vals: [u32; WARP_SIZE] = values
            .iter()
            .map(|&v| {
                i32::try_from(v)
                    .map(|x| x as u32)
                    .or_else(|_| u32::try_from(v))
                    .map_err(|_| ModelError::Launch(format!("value {v} does not fit 32 bits")))
            })
            .collect::<Result<Vec<_>, _>>()?
            .try_into()
            .map_err(|v: Vec<u32>| {
                ModelError::Launch(format!(
                    "register {name} needs {WARP_SIZE} values, got {}",
                    v.len()
                ))
            })?;
        self.registers.insert(reg, vals);
        Ok(())
    }

    pub fn with_active_mask(mut self, mask: LaneMask) -> Self {
        self.active_mask = mask;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }
}

/// One executed instruction on the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub ordinal: u64,
    pub pc: usize,
    pub instruction: Instruction,
    /// Mask the instruction executed under (restored mask for carriers).
    pub active_mask: LaneMask,
    /// Stack depth after the instruction.
    pub depth: usize,
    pub events: Vec<EventKind>,
    /// Cycle counter at issue.
    pub cycle: u64,
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub events: EventCounts,
    pub executed_instructions: u64,
    pub executed_branches: u64,
    pub max_depth: usize,
    /// `(ordinal, depth)` at start and after every depth change; ordinal is
    /// the number of instructions executed so far.
    pub depth_history: Vec<(u64, usize)>,
    pub event_log: Vec<LoggedEvent>,
    pub cycles: u64,
    pub launch_mask: LaneMask,
    pub registers: Vec<[u32; WARP_SIZE]>,
    pub predicates: Vec<LaneMask>,
    /// Per-thread `(slot, value)` records from `STSLOT`, in execution order.
    pub slots: Vec<Vec<(i32, u32)>>,
    /// Per instruction, how many times each lane executed it.
    pub lane_exec_counts: Vec<[u64; WARP_SIZE]>,
    pub trace: Option<Vec<TraceRecord>>,
}

impl RunResult {
    pub fn register(&self, reg: Reg, lane: usize) -> u32 {
        match reg {
            Reg::R(n) => self.registers[n as usize][lane],
            Reg::Zero => 0,
        }
    }

    pub fn register_f32(&self, reg: Reg, lane: usize) -> f32 {
        f32::from_bits(self.register(reg, lane))
    }

    /// Additional branch instructions attributed to stack spills: one per
    /// spill store.
    pub fn extra_branches(&self) -> u64 {
        self.events.spill_stores
    }

    pub fn depth_series(&self) -> Vec<usize> {
        self.depth_history.iter().map(|&(_, d)| d).collect()
    }

    /// Slot value recorded by `lane`, if any (last write wins).
    pub fn slot(&self, lane: usize, slot: i32) -> Option<u32> {
        self.slots[lane]
            .iter()
            .rev()
            .find(|(s, _)| *s == slot)
            .map(|&(_, v)| v)
    }

    /// Replays the event log against a shadow stack and checks the
    /// re-convergence invariants.
    pub fn verify_invariants(&self) -> Result<(), InvariantViolation> {
        let fail = |ordinal: u64, msg: String| Err(InvariantViolation { ordinal, msg });
        let mut shadow: Vec<Token> = Vec::new();
        let mut counts = EventCounts::default();
        for e in &self.event_log {
            counts.record(e.event.kind());
            match e.event {
                Event::Push {
                    token,
                    active_before,
                    active_after,
                } => {
                    match token.id {
                        TokenId::Div => {
                            if token.mask.is_empty() || active_after.is_empty() {
                                return fail(e.ordinal, format!("degenerate divergence {token}"));
                            }
                            if token.mask | active_after != active_before
                                || !(token.mask & active_after).is_empty()
                            {
                                return fail(
                                    e.ordinal,
                                    format!(
                                        "{token} and new mask {active_after} do not partition {active_before}"
                                    ),
                                );
                            }
                        }
                        TokenId::Sync => {
                            if token.mask != active_before || active_after != active_before {
                                return fail(e.ordinal, format!("SYNC token {token} != active {active_before}"));
                            }
                        }
                    }
                    shadow.push(token);
                }
                Event::Pop {
                    token,
                    active_before,
                } => {
                    match shadow.pop() {
                        Some(expected) if expected == token => {}
                        Some(expected) => {
                            return fail(e.ordinal, format!("popped {token}, expected {expected}"))
                        }
                        None => return fail(e.ordinal, "pop from empty shadow stack".into()),
                    }
                    if token.id == TokenId::Sync && !token.mask.covers(active_before) {
                        return fail(
                            e.ordinal,
                            format!("SYNC pop {token} does not cover arriving lanes {active_before}"),
                        );
                    }
                }
                Event::SpillStore | Event::SpillLoad => {}
            }
        }
        let last = self.event_log.last().map_or(0, |e| e.ordinal);
        if !shadow.is_empty() {
            return fail(last, format!("{} tokens left on the stack", shadow.len()));
        }
        if counts != self.events {
            return fail(last, "event log disagrees with counters".into());
        }
        if self.events.total_pushes() != self.events.pops() {
            return fail(last, "pushes != pops".into());
        }
        if self.events.spill_stores != self.events.spill_loads {
            return fail(last, "spill stores != spill loads".into());
        }
        if self.depth_history.last().map(|&(_, d)| d) != Some(0) {
            return fail(last, "final depth is not zero".into());
        }
        if self.depth_series().into_iter().max() != Some(self.max_depth) {
            return fail(last, "max depth disagrees with history".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invariant violated at instruction {ordinal}: {msg}")]
pub struct InvariantViolation {
    pub ordinal: u64,
    pub msg: String,
}

/// What a single step did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub pc: usize,
    pub executed_mask: LaneMask,
    pub exited: bool,
    pub cycle_at_issue: u64,
}

/// Architectural state of one warp.
#[derive(Clone, Debug)]
pub struct WarpState {
    pub pc: usize,
    pub active_mask: LaneMask,
    pub launch_mask: LaneMask,
    pub registers: Vec<[u32; WARP_SIZE]>,
    pub predicates: Vec<LaneMask>,
    pub stack: SyncStack,
    pub cycle: u64,
    pub slots: Vec<Vec<(i32, u32)>>,
    profile: ArchProfile,
}

impl WarpState {
    pub fn new(program: &Program, launch: &LaunchConfig) -> Result<Self, ModelError> {
        launch.profile.validate()?;
        let mut registers = vec![[0u32; WARP_SIZE]; program.register_count()];
        for (reg, values) in &launch.registers {
            match reg {
                Reg::R(n) if (*n as usize) < registers.len() => registers[*n as usize] = *values,
                _ => {
                    return Err(ModelError::Launch(format!(
                        "register {reg} is outside the program's file of {}",
                        registers.len()
                    )))
                }
            }
        }
        Ok(WarpState {
            pc: 0,
            active_mask: launch.active_mask,
            launch_mask: launch.active_mask,
            registers,
            predicates: vec![LaneMask::NONE; program.predicate_count()],
            stack: SyncStack::for_profile(&launch.profile),
            cycle: 0,
            slots: vec![Vec::new(); WARP_SIZE],
            profile: launch.profile.clone(),
        })
    }

    pub fn profile(&self) -> &ArchProfile {
        &self.profile
    }

    fn read(&self, reg: Reg, lane: usize) -> u32 {
        match reg {
            Reg::R(n) => self.registers[n as usize][lane],
            Reg::Zero => 0,
        }
    }

    fn read_src(&self, src: Src, lane: usize) -> u32 {
        match src {
            Src::Reg(r) => self.read(r, lane),
            Src::Imm(v) => v as u32,
        }
    }

    fn write(&mut self, reg: Reg, lane: usize, value: u32) {
        if let Reg::R(n) = reg {
            self.registers[n as usize][lane] = value;
        }
    }

    fn predicate(&self, pred: Pred) -> LaneMask {
        match pred {
            Pred::P(n) => self.predicates[n as usize],
            Pred::True => LaneMask::ALL,
        }
    }

    /// Lanes whose guard evaluates true (before masking by `active_mask`).
    pub fn guard_mask(&self, guard: Option<Guard>) -> LaneMask {
        match guard {
            None => LaneMask::ALL,
            Some(g) if g.negated => !self.predicate(g.pred),
            Some(g) => self.predicate(g.pred),
        }
    }

    fn push(&mut self, token: Token, active_after: LaneMask, sink: &mut Vec<Event>) {
        let active_before = self.active_mask;
        if let Some(spill) = self.stack.push(token) {
            sink.push(Event::from_spill(spill));
        }
        sink.push(Event::Push {
            token,
            active_before,
            active_after,
        });
    }

    /// Predicated branch: `predicate` holds the lanes that would take it.
    ///
    /// No active lane taking it falls through; all active lanes taking it
    /// jump without touching the stack; otherwise the not-taken lanes are
    /// pushed as a DIV token resuming at `pc + 1` and the taken lanes jump.
    pub fn exec_predicated_branch(&mut self, target: usize, predicate: LaneMask, sink: &mut Vec<Event>) {
        let taken = self.active_mask & predicate;
        if taken.is_empty() {
            self.pc += 1;
            return;
        }
        if taken != self.active_mask {
            let token = Token::div(self.active_mask & !predicate, self.pc + 1);
            self.push(token, taken, sink);
        }
        self.active_mask = taken;
        self.pc = target;
    }

    /// Executes one instruction, appending its stack events to `sink`.
    pub fn step(&mut self, program: &Program, sink: &mut Vec<Event>) -> Result<StepInfo, ModelError> {
        let pc = self.pc;
        let ins = *program.get(pc).ok_or(ModelError::PcOutOfRange { pc })?;
        let first_event = sink.len();
        let cycle_at_issue = self.cycle;
        let mut executed_mask = self.active_mask;
        let mut exited = false;

        match ins.opcode {
            Opcode::Ssy { target } => {
                let token = Token::sync(self.active_mask, target);
                self.push(token, self.active_mask, sink);
                self.pc += 1;
            }
            Opcode::Bra { target, guard } => {
                let predicate = self.guard_mask(guard);
                self.exec_predicated_branch(target, predicate, sink);
            }
            Opcode::Exit => {
                if !self.stack.is_empty() {
                    return Err(ModelError::UnbalancedExit {
                        depth: self.stack.depth(),
                    });
                }
                if self.active_mask != self.launch_mask {
                    return Err(ModelError::NotReconverged {
                        active: self.active_mask,
                        launch: self.launch_mask,
                    });
                }
                exited = true;
            }
            _ if ins.pop_bit => {
                let active_before = self.active_mask;
                let (token, reload) = self.stack.pop().ok_or(ModelError::EmptyStackPop { pc })?;
                if let Some(r) = reload {
                    sink.push(Event::from_spill(r));
                }
                sink.push(Event::Pop {
                    token,
                    active_before,
                });
                self.active_mask = token.mask;
                self.pc = token.pc;
                executed_mask = token.mask;
                self.execute_lanes(ins.opcode, cycle_at_issue);
            }
            _ => {
                self.execute_lanes(ins.opcode, cycle_at_issue);
                self.pc += 1;
            }
        }

        let mut cost = self.profile.issue_cost;
        for e in &sink[first_event..] {
            let kind = e.kind();
            if kind == EventKind::DivPop {
                // div_cost covers the carrier's own issue slot
                cost -= self.profile.issue_cost;
            }
            cost += event_cost(kind, &self.profile);
        }
        self.cycle += cost;

        Ok(StepInfo {
            pc,
            executed_mask,
            exited,
            cycle_at_issue,
        })
    }

    fn execute_lanes(&mut self, opcode: Opcode, cycle: u64) {
        let mask = self.active_mask;
        match opcode {
            Opcode::Nop | Opcode::Exit | Opcode::Ssy { .. } | Opcode::Bra { .. } => {}
            Opcode::Iadd { dst, a, b } => {
                for t in mask.lanes() {
                    let v = self.read(a, t).wrapping_add(self.read_src(b, t));
                    self.write(dst, t, v);
                }
            }
            Opcode::FaddImm { dst, src, imm } => {
                for t in mask.lanes() {
                    let v = f32::from_bits(self.read(src, t)) + imm;
                    self.write(dst, t, v.to_bits());
                }
            }
            Opcode::IsetpLt { dst, a, b } => {
                let lt = LaneMask::from_fn(|t| {
                    mask.contains(t) && (self.read(a, t) as i32) < (self.read_src(b, t) as i32)
                });
                if let Pred::P(n) = dst {
                    let p = &mut self.predicates[n as usize];
                    *p = (*p & !mask) | lt;
                }
            }
            Opcode::Mov { dst, src } => {
                for t in mask.lanes() {
                    let v = self.read_src(src, t);
                    self.write(dst, t, v);
                }
            }
            Opcode::Clock { dst } => {
                for t in mask.lanes() {
                    self.write(dst, t, cycle as u32);
                }
            }
            Opcode::StoreSlot { slot, src } => {
                for t in mask.lanes() {
                    let record = (self.read_src(slot, t) as i32, self.read(src, t));
                    self.slots[t].push(record);
                }
            }
        }
    }
}

/// Runs `program` to EXIT under `launch`.
pub fn run(program: &Program, launch: &LaunchConfig) -> Result<RunResult, ModelError> {
    let mut state = WarpState::new(program, launch)?;
    let mut events = EventCounts::default();
    let mut event_log = Vec::new();
    let mut depth_history = vec![(0u64, 0usize)];
    let mut lane_exec_counts = vec![[0u64; WARP_SIZE]; program.len()];
    let mut trace = launch.record_trace.then(Vec::new);
    let mut executed = 0u64;
    let mut branches = 0u64;
    let mut max_depth = 0usize;
    let mut sink = Vec::with_capacity(4);

    loop {
        if executed >= launch.budget {
            return Err(ModelError::BudgetExceeded {
                budget: launch.budget,
            });
        }
        sink.clear();
        let info = state.step(program, &mut sink)?;
        let ordinal = executed;
        executed += 1;

        let ins = program.instructions()[info.pc];
        if matches!(ins.opcode, Opcode::Bra { .. }) {
            branches += 1;
        }
        for t in info.executed_mask.lanes() {
            lane_exec_counts[info.pc][t] += 1;
        }
        for &event in &sink {
            events.record(event.kind());
            event_log.push(LoggedEvent {
                ordinal,
                pc: info.pc,
                event,
            });
        }
        let depth = state.stack.depth();
        if depth != depth_history.last().map_or(0, |&(_, d)| d) {
            depth_history.push((executed, depth));
        }
        max_depth = max_depth.max(depth);
        if let Some(trace) = trace.as_mut() {
            trace.push(TraceRecord {
                ordinal,
                pc: info.pc,
                instruction: ins,
                active_mask: info.executed_mask,
                depth,
                events: sink.iter().map(Event::kind).collect(),
                cycle: info.cycle_at_issue,
            });
        }
        if info.exited {
            break;
        }
    }

    Ok(RunResult {
        events,
        executed_instructions: executed,
        executed_branches: branches,
        max_depth,
        depth_history,
        event_log,
        cycles: state.cycle,
        launch_mask: state.launch_mask,
        registers: state.registers,
        predicates: state.predicates,
        slots: state.slots,
        lane_exec_counts,
        trace,
    })
}
