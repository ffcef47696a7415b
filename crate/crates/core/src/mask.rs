use std::fmt;
use std::ops::{BitAnd, BitOr, Not};

use serde::{Serialize, Serializer};

/// Number of lanes in a warp.
pub const WARP_SIZE: usize = 32;

/// One bit per warp lane; bit `t` set means thread `t` participates.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct LaneMask(pub u32);

impl LaneMask {
    pub const NONE: LaneMask = LaneMask(0);
    pub const ALL: LaneMask = LaneMask(u32::MAX);

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, lane: usize) -> bool {
        lane < WARP_SIZE && self.0 & (1 << lane) != 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    /// True when every lane of `other` is also set in `self`.
    pub fn covers(self, other: LaneMask) -> bool {
        other.0 & !self.0 == 0
    }

    pub fn lanes(self) -> impl Iterator<Item = usize> {
        (0..WARP_SIZE).filter(move |&t| self.contains(t))
    }

    pub fn from_lanes<I: IntoIterator<Item = usize>>(lanes: I) -> Self {
        lanes
            .into_iter()
            .filter(|&t| t < WARP_SIZE)
            .fold(LaneMask::NONE, |m, t| LaneMask(m.0 | (1 << t)))
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> bool) -> Self {
        LaneMask::from_lanes((0..WARP_SIZE).filter(|&t| f(t)))
    }
}

impl BitAnd for LaneMask {
    type Output = LaneMask;
    fn bitand(self, rhs: LaneMask) -> LaneMask {
        LaneMask(self.0 & rhs.0)
    }
}

impl BitOr for LaneMask {
    type Output = LaneMask;
    fn bitor(self, rhs: LaneMask) -> LaneMask {
        LaneMask(self.0 | rhs.0)
    }
}

impl Not for LaneMask {
    type Output = LaneMask;
    fn not(self) -> LaneMask {
        LaneMask(!self.0)
    }
}

impl fmt::Debug for LaneMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LaneMask({:#010X})", self.0)
    }
}

impl fmt::Display for LaneMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08X}", self.0)
    }
}

impl Serialize for LaneMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
