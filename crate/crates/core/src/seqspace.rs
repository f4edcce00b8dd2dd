//! Modular sequence-number arithmetic.
//!
//! All TCP window tests reduce to membership in half-open modular
//! intervals. The space size is a parameter so the same classifiers and
//! search routines can be exercised exhaustively in a reduced space
//! (e.g. 2^16) against brute-force oracles.

/// A modular sequence-number space of size `2^bits`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ModSpace {
    bits: u32,
}

impl ModSpace {
    /// The full 32-bit TCP sequence space.
    pub const FULL: ModSpace = ModSpace { bits: 32 };

    pub fn new(bits: u32) -> ModSpace {
        assert!((2..=32).contains(&bits), "space must be 2..=32 bits");
        ModSpace { bits }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of values in the space, as u64 (2^32 does not fit in u32).
    pub fn size(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn mask(&self) -> u32 {
        (self.size() - 1) as u32
    }

    /// Half the space: 2^(bits-1).
    pub fn half(&self) -> u32 {
        1u32 << (self.bits - 1)
    }

    pub fn wrap(&self, x: u64) -> u32 {
        (x & (self.size() - 1)) as u32
    }

    pub fn add(&self, a: u32, b: u32) -> u32 {
        a.wrapping_add(b) & self.mask()
    }

    pub fn sub(&self, a: u32, b: u32) -> u32 {
        a.wrapping_sub(b) & self.mask()
    }

    /// Forward distance from `from` to `to`, in [0, size).
    pub fn distance(&self, from: u32, to: u32) -> u32 {
        self.sub(to, from)
    }

    /// Membership in the half-open interval [lo, lo + len) of this space.
    pub fn in_window(&self, x: u32, lo: u32, len: u64) -> bool {
        debug_assert!(len <= self.size());
        (self.sub(x, lo) as u64) < len
    }
}

/// Modular-interval membership in the full 2^32 space:
/// true iff (x - lo) mod 2^32 < len.
pub fn mod_in_window(x: u32, lo: u32, len: u64) -> bool {
    ModSpace::FULL.in_window(x, lo, len)
}
