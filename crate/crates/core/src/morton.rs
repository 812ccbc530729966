//! Morton keys for boxes of a uniform octree over a [`BoundingCube`].
//!
//! A key packs the box anchor (its minimal corner, expressed on the finest
//! lattice of `2^MAX_DEPTH` cells per axis) bit-interleaved into the high 48
//! bits, and the box level into the low 16 bits. Sorting keys at a fixed level
//! is sorting boxes along the Z-curve, and an ancestor always sorts before its
//! descendants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{BoundingCube, Point3};

/// Deepest supported level.
pub const MAX_DEPTH: u32 = 16;

const LEVEL_BITS: u32 = 16;
const LEVEL_MASK: u64 = (1 << LEVEL_BITS) - 1;
const LATTICE: u64 = 1 << MAX_DEPTH;

/// Spread the low 21 bits of `x` so that bit `i` lands on bit `3i`.
#[inline(always)]
fn spread(x: u64) -> u64 {
    let mut x = x & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

/// Inverse of [`spread`].
#[inline(always)]
fn compact(x: u64) -> u64 {
    let mut x = x & 0x1249_2492_4924_9249;
    x = (x ^ (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x ^ (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x ^ (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x ^ (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x ^ (x >> 32)) & 0x1f_ffff;
    x
}

/// A box of the octree, identified by anchor and level.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct MortonKey(u64);

impl fmt::Debug for MortonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y, z] = self.index();
        write!(f, "MortonKey(l{} [{x},{y},{z}])", self.level())
    }
}

impl fmt::Display for MortonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl MortonKey {
    pub const ROOT: MortonKey = MortonKey(0);

    /// Build a key from an anchor on the finest lattice.
    pub fn from_anchor(anchor: [u32; 3], level: u32) -> Result<Self> {
        if level > MAX_DEPTH {
            return Err(FmmError::InvalidLevel(level));
        }
        let shift = MAX_DEPTH - level;
        let aligned = anchor
            .iter()
            .all(|&a| (a as u64) < LATTICE && (a as u64) & ((1u64 << shift) - 1) == 0);
        if !aligned {
            return Err(FmmError::InvalidConfig(format!(
                "anchor {anchor:?} is not aligned to level {level}"
            )));
        }
        Ok(Self::pack(anchor, level))
    }

    /// Build a key from its lattice index at its own level.
    pub fn from_index(index: [u32; 3], level: u32) -> Result<Self> {
        if level > MAX_DEPTH {
            return Err(FmmError::InvalidLevel(level));
        }
        if index.iter().any(|&i| (i as u64) >= 1u64 << level) {
            return Err(FmmError::InvalidConfig(format!(
                "index {index:?} outside the level {level} lattice"
            )));
        }
        let shift = MAX_DEPTH - level;
        Ok(Self::pack(index.map(|i| ((i as u64) << shift) as u32), level))
    }

    #[inline(always)]
    fn pack(anchor: [u32; 3], level: u32) -> Self {
        let interleaved =
            spread(anchor[0] as u64) << 2 | spread(anchor[1] as u64) << 1 | spread(anchor[2] as u64);
        MortonKey(interleaved << LEVEL_BITS | level as u64)
    }

    /// Validate and wrap a raw code.
    pub fn from_code(code: u64) -> Result<Self> {
        let level = (code & LEVEL_MASK) as u32;
        if level > MAX_DEPTH {
            return Err(FmmError::MalformedKey(code));
        }
        let key = MortonKey(code);
        let shift = MAX_DEPTH - level;
        if key.anchor().iter().any(|&a| a & ((1u32 << shift) - 1) != 0) {
            return Err(FmmError::MalformedKey(code));
        }
        Ok(key)
    }

    #[inline(always)]
    pub fn code(self) -> u64 {
        self.0
    }

    #[inline(always)]
    pub fn level(self) -> u32 {
        (self.0 & LEVEL_MASK) as u32
    }

    /// Minimal corner on the finest lattice.
    pub fn anchor(self) -> [u32; 3] {
        let bits = self.0 >> LEVEL_BITS;
        [compact(bits >> 2) as u32, compact(bits >> 1) as u32, compact(bits) as u32]
    }

    /// Lattice index at the key's own level.
    pub fn index(self) -> [u32; 3] {
        let shift = MAX_DEPTH - self.level();
        self.anchor().map(|a| a >> shift)
    }

    /// Position along the Z-curve among the `8^level` boxes of this level.
    pub fn morton_index(self) -> u64 {
        (self.0 >> LEVEL_BITS) >> (3 * (MAX_DEPTH - self.level()))
    }

    pub fn parent(self) -> Result<Self> {
        let level = self.level();
        if level == 0 {
            return Err(FmmError::RootHasNoParent);
        }
        self.ancestor(level - 1)
    }

    /// The ancestor (or the key itself) at `level`.
    pub fn ancestor(self, level: u32) -> Result<Self> {
        if level > self.level() {
            return Err(FmmError::InvalidLevel(level));
        }
        let shift = MAX_DEPTH - level;
        let anchor = self.anchor().map(|a| (a >> shift) << shift);
        Ok(Self::pack(anchor, level))
    }

    /// Which of its parent's eight children this box is (x bit high, z bit low).
    pub fn octant(self) -> usize {
        let [x, y, z] = self.index();
        ((x & 1) << 2 | (y & 1) << 1 | (z & 1)) as usize
    }

    /// The eight children, in Morton order.
    pub fn children(self) -> Result<[Self; 8]> {
        let level = self.level();
        if level >= MAX_DEPTH {
            return Err(FmmError::NoChildren(self));
        }
        let step = 1u32 << (MAX_DEPTH - level - 1);
        let [ax, ay, az] = self.anchor();
        Ok(std::array::from_fn(|oct| {
            let (bx, by, bz) = ((oct >> 2) & 1, (oct >> 1) & 1, oct & 1);
            Self::pack(
                [ax + bx as u32 * step, ay + by as u32 * step, az + bz as u32 * step],
                level + 1,
            )
        }))
    }

    /// Same-level key displaced by `offset` lattice cells, if it lies in the lattice.
    pub fn offset(self, offset: [i64; 3]) -> Option<Self> {
        let level = self.level();
        let n = 1i64 << level;
        let index = self.index();
        let mut shifted = [0u32; 3];
        for axis in 0..3 {
            let c = index[axis] as i64 + offset[axis];
            if !(0..n).contains(&c) {
                return None;
            }
            shifted[axis] = c as u32;
        }
        let shift = MAX_DEPTH - level;
        Some(Self::pack(shifted.map(|i| i << shift), level))
    }

    /// Colleagues: same-level boxes sharing a face, edge or vertex, sorted.
    pub fn neighbors(self) -> Vec<Self> {
        let mut out = Vec::with_capacity(26);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if (dx, dy, dz) == (0, 0, 0) {
                        continue;
                    }
                    if let Some(k) = self.offset([dx, dy, dz]) {
                        out.push(k);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// True when both keys are at the same level and touch without coinciding.
    pub fn is_adjacent(self, other: MortonKey) -> bool {
        if self.level() != other.level() || self == other {
            return false;
        }
        let (a, b) = (self.index(), other.index());
        (0..3).all(|i| (a[i] as i64 - b[i] as i64).abs() <= 1)
    }

    pub fn is_ancestor_of(self, other: MortonKey) -> bool {
        self.level() <= other.level() && other.ancestor(self.level()).map(|a| a == self).unwrap_or(false)
    }

    /// First descendant (in Morton order) at a deeper level.
    pub fn first_descendant(self, level: u32) -> Result<Self> {
        if level < self.level() || level > MAX_DEPTH {
            return Err(FmmError::InvalidLevel(level));
        }
        Ok(Self::pack(self.anchor(), level))
    }

    /// All descendants at `level`, in Morton order.
    pub fn descendants(self, level: u32) -> Result<Vec<Self>> {
        let first = self.first_descendant(level)?;
        let count = 1u64 << (3 * (level - self.level()));
        let start = first.morton_index();
        Ok((start..start + count).map(|m| Self::from_morton_index(m, level)).collect())
    }

    /// Inverse of [`MortonKey::morton_index`].
    pub fn from_morton_index(index: u64, level: u32) -> Self {
        let bits = index << (3 * (MAX_DEPTH - level));
        MortonKey(bits << LEVEL_BITS | level as u64)
    }
}

/// Key of the level-`level` box containing `p`.
///
/// Cells are half-open; points on the upper faces of the cube land in the last cell.
pub fn encode(p: &Point3, level: u32, cube: &BoundingCube) -> Result<MortonKey> {
    if level > MAX_DEPTH {
        return Err(FmmError::InvalidLevel(level));
    }
    if !p.is_finite() || !cube.contains(p) {
        return Err(FmmError::OutsideCube { x: p.x, y: p.y, z: p.z });
    }
    let o = cube.origin.to_array();
    let scale = LATTICE as f64 / cube.side;
    let shift = MAX_DEPTH - level;
    let anchor = std::array::from_fn(|axis| {
        let c = ((p.to_array()[axis] - o[axis]) * scale).floor();
        let cell = (c.max(0.0) as u64).min(LATTICE - 1) as u32;
        (cell >> shift) << shift
    });
    Ok(MortonKey::pack(anchor, level))
}

/// Minimal corner and side length of a box.
pub fn decode(key: MortonKey, cube: &BoundingCube) -> Result<(Point3, f64)> {
    let key = MortonKey::from_code(key.code())?;
    let cell = cube.side / LATTICE as f64;
    let a = key.anchor();
    let o = cube.origin;
    let anchor = Point3::new(
        o.x + a[0] as f64 * cell,
        o.y + a[1] as f64 * cell,
        o.z + a[2] as f64 * cell,
    );
    Ok((anchor, cube.side / (1u64 << key.level()) as f64))
}

/// Center of a box.
pub fn box_center(key: MortonKey, cube: &BoundingCube) -> Point3 {
    let cell = cube.side / LATTICE as f64;
    let a = key.anchor();
    let half = 0.5 * cube.side / (1u64 << key.level()) as f64;
    let o = cube.origin;
    Point3::new(
        o.x + a[0] as f64 * cell + half,
        o.y + a[1] as f64 * cell + half,
        o.z + a[2] as f64 * cell + half,
    )
}
