//! Architecture profiles, the spilling synchronization stack, and cycle
//! accounting over stack events.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::kernels::KernelId;
use crate::warp::{RunResult, Token, TokenId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("profile `{profile}` has no base cycle constant for kernel `{kernel}`")]
    NoBaseCycles { profile: String, kernel: KernelId },
    #[error("unknown architecture `{0}` (built-in profiles: kepler, maxwell)")]
    UnknownArch(String),
    #[error("profile line {line}: {msg}")]
    ProfileSyntax { line: usize, msg: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("cannot read profile {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Cost constants for one GPU architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchProfile {
    pub name: String,
    /// Cycles per DIV-token pop, including execution of its carrier.
    pub div_cost: u64,
    /// On-chip stack entries; `None` disables spilling.
    pub phys_capacity: Option<usize>,
    /// Entries moved per spill or reload.
    pub spill_chunk: usize,
    pub spill_store_cost: u64,
    pub spill_load_cost: u64,
    /// Cycles per executed instruction on the emulated timeline. Does not
    /// enter [`charge`]; it is folded into the calibrated base constants.
    pub issue_cost: u64,
    pub base_cycles: BTreeMap<KernelId, u64>,
}

impl ArchProfile {
    pub fn kepler() -> Self {
        ArchProfile {
            name: "kepler".into(),
            div_cost: 32,
            phys_capacity: Some(16),
            spill_chunk: 4,
            spill_store_cost: 40,
            spill_load_cost: 44,
            issue_cost: 1,
            base_cycles: BTreeMap::from([
                (KernelId::SingleLoop, 1732),
                (KernelId::DoubleLoop, 57024),
            ]),
        }
    }

    /// Maxwell: fitted divergence cost, 176-cycle spill round trip split
    /// evenly. No published base constants.
    pub fn maxwell() -> Self {
        ArchProfile {
            name: "maxwell".into(),
            div_cost: 26,
            phys_capacity: Some(16),
            spill_chunk: 4,
            spill_store_cost: 88,
            spill_load_cost: 88,
            issue_cost: 1,
            base_cycles: BTreeMap::new(),
        }
    }

    pub fn builtin(name: &str) -> Result<Self, CostError> {
        match name.to_ascii_lowercase().as_str() {
            "kepler" => Ok(Self::kepler()),
            "maxwell" => Ok(Self::maxwell()),
            _ => Err(CostError::UnknownArch(name.to_string())),
        }
    }

    /// Same profile with spilling disabled.
    pub fn unbounded(mut self) -> Self {
        self.phys_capacity = None;
        self
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if self.spill_chunk == 0 {
            return Err(CostError::InvalidProfile("spill_chunk must be at least 1".into()));
        }
        if let Some(cap) = self.phys_capacity {
            if self.spill_chunk > cap {
                return Err(CostError::InvalidProfile(format!(
                    "spill_chunk {} exceeds phys_capacity {cap}",
                    self.spill_chunk
                )));
            }
        }
        Ok(())
    }

    /// Parses a `key = value` profile. Unspecified keys inherit from the
    /// built-in profile named by `base` (if given) or from Kepler.
    ///
    /// Keys: `name`, `base`, `div_cost`, `phys_capacity` (integer or `inf`),
    /// `spill_chunk`, `spill_store_cost`, `spill_load_cost`, `issue_cost`,
    /// `base.single`, `base.double`, `base.instrumented`.
    pub fn from_config(text: &str) -> Result<Self, CostError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CostError::ProfileSyntax {
                line: idx + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            entries.push((idx + 1, k.trim().to_string(), v.trim().to_string()));
        }

        let mut profile = match entries.iter().find(|(_, k, _)| k == "base") {
            Some((_, _, v)) => Self::builtin(v)?,
            None => Self::kepler(),
        };
        for (line, key, value) in entries {
            let syntax = |msg: String| CostError::ProfileSyntax { line, msg };
            let int = || {
                value
                    .parse::<u64>()
                    .map_err(|_| syntax(format!("`{key}` expects a non-negative integer, found `{value}`")))
            };
            match key.as_str() {
                "base" => {}
                "name" => profile.name = value.clone(),
                "div_cost" => profile.div_cost = int()?,
                "phys_capacity" => {
                    profile.phys_capacity = match value.as_str() {
                        "inf" | "unbounded" | "none" => None,
                        _ => Some(int()? as usize),
                    }
                }
                "spill_chunk" => profile.spill_chunk = int()? as usize,
                "spill_store_cost" => profile.spill_store_cost = int()?,
                "spill_load_cost" => profile.spill_load_cost = int()?,
                "issue_cost" => profile.issue_cost = int()?,
                k if k.starts_with("base.") => {
                    let kernel = KernelId::from_str(&k["base.".len()..])
                        .map_err(|e| syntax(e.to_string()))?;
                    profile.base_cycles.insert(kernel, int()?);
                }
                _ => return Err(syntax(format!("unknown key `{key}`"))),
            }
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_config(&text)
    }
}

/// Countable stack events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SyncPush,
    DivPush,
    DivPop,
    SyncPop,
    SpillStore,
    SpillLoad,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::SyncPush => "SYNC_PUSH",
            EventKind::DivPush => "DIV_PUSH",
            EventKind::DivPop => "DIV_POP",
            EventKind::SyncPop => "SYNC_POP",
            EventKind::SpillStore => "SPILL_STORE",
            EventKind::SpillLoad => "SPILL_LOAD",
        })
    }
}

/// Event totals over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub sync_pushes: u64,
    pub div_pushes: u64,
    pub sync_pops: u64,
    pub div_pops: u64,
    pub spill_stores: u64,
    pub spill_loads: u64,
}

impl EventCounts {
    pub fn record(&mut self, kind: EventKind) {
        match kind {
            EventKind::SyncPush => self.sync_pushes += 1,
            EventKind::DivPush => self.div_pushes += 1,
            EventKind::SyncPop => self.sync_pops += 1,
            EventKind::DivPop => self.div_pops += 1,
            EventKind::SpillStore => self.spill_stores += 1,
            EventKind::SpillLoad => self.spill_loads += 1,
        }
    }

    pub fn from_kinds<I: IntoIterator<Item = EventKind>>(kinds: I) -> Self {
        let mut c = Self::default();
        kinds.into_iter().for_each(|k| c.record(k));
        c
    }

    pub fn total_pushes(&self) -> u64 {
        self.sync_pushes + self.div_pushes
    }

    pub fn pops(&self) -> u64 {
        self.sync_pops + self.div_pops
    }
}

/// Cycles attributed to stack events.
///
/// Divergence is charged entirely at unwinding (per DIV pop); pushes are
/// free and SYNC pops are part of the kernel's base cost.
pub fn charge(events: &EventCounts, profile: &ArchProfile) -> u64 {
    profile.div_cost * events.div_pops
        + profile.spill_store_cost * events.spill_stores
        + profile.spill_load_cost * events.spill_loads
}

/// Cycle cost of a single event; sums to [`charge`] over a run.
pub fn event_cost(kind: EventKind, profile: &ArchProfile) -> u64 {
    match kind {
        EventKind::DivPop => profile.div_cost,
        EventKind::SpillStore => profile.spill_store_cost,
        EventKind::SpillLoad => profile.spill_load_cost,
        EventKind::SyncPush | EventKind::DivPush | EventKind::SyncPop => 0,
    }
}

/// Calibrated base constant plus event overhead.
pub fn predict_total(
    kernel: KernelId,
    profile: &ArchProfile,
    result: &RunResult,
) -> Result<u64, CostError> {
    let base = profile
        .base_cycles
        .get(&kernel)
        .ok_or_else(|| CostError::NoBaseCycles {
            profile: profile.name.clone(),
            kernel,
        })?;
    Ok(base + charge(&result.events, profile))
}

/// The logical synchronization stack with a bounded on-chip segment.
///
/// When a push finds the on-chip segment full, its `spill_chunk` oldest
/// entries move to backing memory. A pop that finds the on-chip segment
/// empty first reloads the most recently spilled chunk.
#[derive(Clone, Debug)]
pub struct SyncStack {
    on_chip: Vec<Token>,
    spilled: Vec<Token>,
    capacity: Option<usize>,
    chunk: usize,
}

impl SyncStack {
    pub fn new(capacity: Option<usize>, chunk: usize) -> Self {
        SyncStack {
            on_chip: Vec::new(),
            spilled: Vec::new(),
            capacity,
            chunk: chunk.max(1),
        }
    }

    pub fn for_profile(profile: &ArchProfile) -> Self {
        Self::new(profile.phys_capacity, profile.spill_chunk)
    }

    pub fn depth(&self) -> usize {
        self.on_chip.len() + self.spilled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth() == 0
    }

    pub fn on_chip_len(&self) -> usize {
        self.on_chip.len()
    }

    pub fn spilled_len(&self) -> usize {
        self.spilled.len()
    }

    pub fn top(&self) -> Option<&Token> {
        self.on_chip.last().or(self.spilled.last())
    }

    /// Pushes `token`, returning `Some(SpillStore)` if room had to be made.
    pub fn push(&mut self, token: Token) -> Option<EventKind> {
        let mut event = None;
        if let Some(cap) = self.capacity {
            if self.on_chip.len() >= cap {
                let n = self.chunk.min(self.on_chip.len());
                self.spilled.extend(self.on_chip.drain(..n));
                event = Some(EventKind::SpillStore);
            }
        }
        self.on_chip.push(token);
        event
    }

    /// Pops the top token along with a `SpillLoad` event if a reload was
    /// needed. `None` on an empty stack.
    pub fn pop(&mut self) -> Option<(Token, Option<EventKind>)> {
        let mut event = None;
        if self.on_chip.is_empty() {
            if self.spilled.is_empty() {
                return None;
            }
            let from = self.spilled.len().saturating_sub(self.chunk);
            self.on_chip.extend(self.spilled.drain(from..));
            event = Some(EventKind::SpillLoad);
        }
        self.on_chip.pop().map(|t| (t, event))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Token> {
        self.spilled.iter().chain(self.on_chip.iter())
    }
}

impl Token {
    pub fn is_div(&self) -> bool {
        self.id == TokenId::Div
    }
}
