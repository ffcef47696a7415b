//! Single-warp SIMT divergence emulator.
//!
//! A warp executes a small SASS-like program under an active mask. Divergent
//! predicated branches push tokens onto a synchronization stack that the
//! `.S` pop-bit unwinds. Stack events drive a per-architecture cycle model
//! with a bounded on-chip stack that spills to memory in fixed chunks.

pub mod cost;
pub mod harness;
pub mod isa;
pub mod kernels;
pub mod mask;
pub mod warp;

pub use cost::{charge, predict_total, ArchProfile, EventCounts, EventKind, SyncStack};
pub use isa::{format_program, parse_program, Program};
pub use kernels::{bound_pattern, BoundPattern, KernelId};
pub use mask::{LaneMask, WARP_SIZE};
pub use warp::{run, LaunchConfig, ModelError, RunResult, Token, TokenId};
