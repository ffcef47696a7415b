//! Test-only oracles, independent of the emulator.

#![allow(dead_code)]

use warpdiv_core::isa::Program;
use warpdiv_core::warp::{run, LaunchConfig, RunResult};

/// Per-thread reference for the single loop: no masks, no stack.
pub fn scalar_single(m: i32) -> (u64, f32) {
    let mut acc = 0f32;
    let mut body = 0;
    if m >= 1 {
        let mut i = 0;
        loop {
            i += 1;
            acc += 1.3333f32;
            body += 1;
            if i >= m {
                break;
            }
        }
    }
    (body, acc)
}

/// Per-thread reference for the double loop: (inner body count, outer body
/// count, accumulator).
pub fn scalar_double(m: i32, n: i32) -> (u64, u64, f32) {
    let mut acc = 0f32;
    let (mut inner, mut outer) = (0, 0);
    if m >= 1 {
        let mut i = 0;
        loop {
            if n >= 1 {
                let mut j = 0;
                loop {
                    j += 1;
                    acc += 1.3333f32;
                    inner += 1;
                    if j >= n {
                        break;
                    }
                }
            }
            i += 1;
            acc += 2.3333f32;
            outer += 1;
            if i >= m {
                break;
            }
        }
    }
    (inner, outer, acc)
}

/// Distance in units in the last place between two finite floats.
pub fn ulps(a: f32, b: f32) -> u32 {
    let key = |x: f32| {
        let bits = x.to_bits() as i32;
        if bits < 0 {
            i32::MIN.wrapping_sub(bits)
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Count-only model of the spilling stack: tracks occupancies, never tokens.
#[derive(Clone, Debug)]
pub struct OccupancyTracker {
    pub on_chip: usize,
    pub spilled: usize,
    pub capacity: usize,
    pub chunk: usize,
    pub stores: u64,
    pub loads: u64,
}

impl OccupancyTracker {
    pub fn new(capacity: usize, chunk: usize) -> Self {
        OccupancyTracker {
            on_chip: 0,
            spilled: 0,
            capacity,
            chunk,
            stores: 0,
            loads: 0,
        }
    }

    pub fn push(&mut self) {
        if self.on_chip == self.capacity {
            self.on_chip -= self.chunk;
            self.spilled += self.chunk;
            self.stores += 1;
        }
        self.on_chip += 1;
    }

    pub fn pop(&mut self) {
        if self.on_chip == 0 {
            self.on_chip += self.chunk;
            self.spilled -= self.chunk;
            self.loads += 1;
        }
        self.on_chip -= 1;
    }

    pub fn depth(&self) -> usize {
        self.on_chip + self.spilled
    }
}

/// Spill stores for a run of `pushes` consecutive pushes, from the tracker.
pub fn spills_for_monotone_pushes(pushes: usize, capacity: usize, chunk: usize) -> u64 {
    let mut t = OccupancyTracker::new(capacity, chunk);
    for _ in 0..pushes {
        t.push();
    }
    t.stores
}

/// Runs and asserts the re-convergence invariants on the result.
pub fn checked_run(program: &Program, launch: &LaunchConfig) -> RunResult {
    let r = run(program, launch).expect("run completes");
    if let Err(e) = r.verify_invariants() {
        panic!("{e}");
    }
    r
}
