//! Voxel addressing under the octree layout.
//!
//! A voxel is a leaf cell of a conceptual octree of depth [`MAX_LEVEL`]. Its
//! identity is a left-aligned Morton code: 16 groups of 3 bits, the most
//! significant group selecting the level-1 octant. Bits are ordered x, y, z
//! from most to least significant within a group.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::real::Real;

pub const MAX_LEVEL: u8 = 16;

/// Bits used by a full-depth code.
pub const CODE_BITS: u32 = 3 * MAX_LEVEL as u32;

const CODE_MASK: u64 = (1 << CODE_BITS) - 1;

/// `0b001` repeated in every 3-bit group.
const GROUP_ONES: u64 = 0x2492_4924_9249;

/// Resolution of the corner-key lattice along each axis.
pub const KEY_RESOLUTION: u32 = 1 << MAX_LEVEL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub level: u8,
}

impl VoxelIndex {
    pub fn new(i: u32, j: u32, k: u32, level: u8) -> Result<Self> {
        let v = VoxelIndex { i, j, k, level };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEVEL).contains(&self.level) {
            return Err(Error::invalid(format!("level {} outside [1, 16]", self.level)));
        }
        let n = 1u64 << self.level;
        if self.i as u64 >= n || self.j as u64 >= n || self.k as u64 >= n {
            return Err(Error::invalid(format!(
                "index ({}, {}, {}) out of range for level {}",
                self.i, self.j, self.k, self.level
            )));
        }
        Ok(())
    }

    /// Grid-point keys of the 8 corners on the finest lattice, ordered by
    /// corner id `4*di + 2*dj + dk`. Equal keys mean coincident corners,
    /// whatever the levels of the voxels involved.
    pub fn corner_keys(&self) -> [[u32; 3]; 8] {
        let shift = MAX_LEVEL - self.level;
        std::array::from_fn(|c| {
            let (di, dj, dk) = corner_offset(c);
            [
                (self.i + di) << shift,
                (self.j + dj) << shift,
                (self.k + dk) << shift,
            ]
        })
    }
}

/// `(di, dj, dk)` of corner id `c = 4*di + 2*dj + dk`.
#[inline]
pub const fn corner_offset(c: usize) -> (u32, u32, u32) {
    (((c >> 2) & 1) as u32, ((c >> 1) & 1) as u32, (c & 1) as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OctPath {
    code: u64,
    level: u8,
}

impl OctPath {
    pub fn new(code: u64, level: u8) -> Result<Self> {
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(Error::invalid(format!("level {level} outside [1, 16]")));
        }
        if code & !CODE_MASK != 0 {
            return Err(Error::invalid(format!("code {code:#x} wider than 48 bits")));
        }
        let low = 3 * (MAX_LEVEL - level) as u32;
        if low > 0 && code & ((1u64 << low) - 1) != 0 {
            return Err(Error::invalid(format!(
                "code {code:#x} has bits set below level {level}"
            )));
        }
        Ok(OctPath { code, level })
    }

    #[inline]
    pub fn code(&self) -> u64 {
        self.code
    }

    #[inline]
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn to_index(&self) -> VoxelIndex {
        let mut path = self.code >> (3 * (MAX_LEVEL - self.level) as u32);
        let (mut i, mut j, mut k) = (0u32, 0u32, 0u32);
        for n in 0..self.level as u32 {
            i |= (((path & 0b100) >> 2) as u32) << n;
            j |= (((path & 0b010) >> 1) as u32) << n;
            k |= ((path & 0b001) as u32) << n;
            path >>= 3;
        }
        VoxelIndex {
            i,
            j,
            k,
            level: self.level,
        }
    }

    /// The 3-bit group selecting this voxel inside its parent.
    pub fn last_group(&self) -> u8 {
        ((self.code >> (3 * (MAX_LEVEL - self.level) as u32)) & 0b111) as u8
    }

    /// The 8 children, ordered by child group `c = 4*di + 2*dj + dk`.
    pub fn children(&self) -> Result<[OctPath; 8]> {
        if self.level >= MAX_LEVEL {
            return Err(Error::invalid("cannot subdivide a voxel at the maximum level"));
        }
        let level = self.level + 1;
        let shift = 3 * (MAX_LEVEL - level) as u32;
        Ok(std::array::from_fn(|c| OctPath {
            code: self.code | ((c as u64) << shift),
            level,
        }))
    }

    pub fn parent(&self) -> Option<OctPath> {
        if self.level <= 1 {
            return None;
        }
        let level = self.level - 1;
        let keep = 3 * level as u32;
        let mask = ((1u64 << keep) - 1) << (CODE_BITS - keep);
        Some(OctPath {
            code: self.code & mask,
            level,
        })
    }

    /// True iff `self` is a strict ancestor of `other`.
    pub fn is_ancestor_of(&self, other: &OctPath) -> bool {
        if self.level >= other.level {
            return false;
        }
        let shift = CODE_BITS - 3 * self.level as u32;
        (self.code >> shift) == (other.code >> shift)
    }
}

pub fn to_octpath(v: VoxelIndex) -> Result<OctPath> {
    v.validate()?;
    let (mut i, mut j, mut k) = (v.i as u64, v.j as u64, v.k as u64);
    let mut code = 0u64;
    for n in 0..v.level as u32 {
        let bits = 4 * (i & 1) + 2 * (j & 1) + (k & 1);
        code |= bits << (3 * n);
        i >>= 1;
        j >>= 1;
        k >>= 1;
    }
    Ok(OctPath {
        code: code << (3 * (MAX_LEVEL - v.level) as u32),
        level: v.level,
    })
}

/// Inverse of [`to_octpath`] on a raw code; rejects stray low bits.
pub fn to_voxel_index(code: u64, level: u8) -> Result<VoxelIndex> {
    Ok(OctPath::new(code, level)?.to_index())
}

pub fn is_ancestor(a: &OctPath, b: &OctPath) -> bool {
    a.is_ancestor_of(b)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneBounds {
    pub center: [f64; 3],
    pub size: f64,
}

impl SceneBounds {
    pub fn new(center: [f64; 3], size: f64) -> Result<Self> {
        if !(size > 0.0) || !size.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("scene size must be positive, got {size}")));
        }
        Ok(SceneBounds { center, size })
    }

    pub fn min_corner(&self) -> Vector3<f64> {
        Vector3::from(self.center).add_scalar(-0.5 * self.size)
    }

    /// World position of a corner key.
    pub fn key_position(&self, key: [u32; 3]) -> Vector3<f64> {
        let scale = self.size / KEY_RESOLUTION as f64;
        self.min_corner() + Vector3::new(key[0] as f64, key[1] as f64, key[2] as f64) * scale
    }
}

/// Center and edge length of a voxel. The center carries a +0.5 index offset
/// so it is the midpoint of the cell, not its minimum corner.
pub fn voxel_geometry(b: &SceneBounds, v: &VoxelIndex) -> (Vector3<f64>, f64) {
    let size = b.size * (-(v.level as f64)).exp2();
    let idx = Vector3::new(v.i as f64, v.j as f64, v.k as f64).add_scalar(0.5);
    (b.min_corner() + idx * size, size)
}

/// Which world axes a ray direction points negatively along:
/// bit 2 = x, bit 1 = y, bit 0 = z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignBits(u8);

impl SignBits {
    pub fn new(bits: u8) -> Result<Self> {
        if bits > 7 {
            return Err(Error::invalid(format!("sign bits {bits} exceed 3 bits")));
        }
        Ok(SignBits(bits))
    }

    #[inline]
    pub fn bits(self) -> u8 {
        self.0
    }
}

/// Zero components count as non-negative.
#[inline]
pub fn ray_sign_bits<R: Real>(dir: &Vector3<R>) -> SignBits {
    let zero = R::zero();
    SignBits(4 * (dir.x < zero) as u8 + 2 * (dir.y < zero) as u8 + (dir.z < zero) as u8)
}

/// Remaps every 3-bit group of the code with the permutation for `s`, which is
/// exactly a xor of each group with `s`. Sorting by the result is front to
/// back for any ray whose direction has sign bits `s`.
#[inline]
pub fn dir_dep_order(p: &OctPath, s: SignBits) -> u64 {
    p.code ^ (s.0 as u64 * GROUP_ONES)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORDER_TABLES: [[u8; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 3, 2, 5, 4, 7, 6],
        [2, 3, 0, 1, 6, 7, 4, 5],
        [3, 2, 1, 0, 7, 6, 5, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 7, 6, 1, 0, 3, 2],
        [6, 7, 4, 5, 2, 3, 0, 1],
        [7, 6, 5, 4, 3, 2, 1, 0],
    ];

    fn table_order(code: u64, s: u8) -> u64 {
        let mut code = code;
        let mut order = 0;
        for i in 0..16 {
            order |= (ORDER_TABLES[s as usize][(code & 0b111) as usize] as u64) << (3 * i);
            code >>= 3;
        }
        order
    }

    #[test]
    fn octpath_examples() {
        let zero = to_octpath(VoxelIndex::new(0, 0, 0, 7).unwrap()).unwrap();
        assert_eq!(zero.code(), 0);
        let p = to_octpath(VoxelIndex::new(1, 0, 0, 1).unwrap()).unwrap();
        assert_eq!(p.code(), 140737488355328);
        assert_eq!(p.code(), 0b100 << 45);
        assert_eq!(to_voxel_index(0b100 << 45, 1).unwrap(), VoxelIndex::new(1, 0, 0, 1).unwrap());
        assert_eq!(to_voxel_index(0, 3).unwrap(), VoxelIndex::new(0, 0, 0, 3).unwrap());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(VoxelIndex::new(2, 0, 0, 1).is_err());
        assert!(VoxelIndex::new(0, 0, 0, 0).is_err());
        assert!(VoxelIndex::new(0, 0, 0, 17).is_err());
        assert!(to_voxel_index(1, 1).is_err());
        assert!(to_voxel_index(1 << 44, 1).is_err());
        assert!(OctPath::new(1 << 48, 16).is_err());
        let deepest = OctPath::new(0, 16).unwrap();
        assert!(deepest.children().is_err());
    }

    #[test]
    fn sign_bits_examples() {
        assert_eq!(ray_sign_bits(&Vector3::new(1.0, 1.0, 1.0)).bits(), 0);
        assert_eq!(ray_sign_bits(&Vector3::new(-1.0, 2.0, -3.0)).bits(), 5);
        assert_eq!(ray_sign_bits(&Vector3::new(0.0, -1.0, 0.0)).bits(), 2);
        assert_eq!(ray_sign_bits(&Vector3::new(-0.0f32, 0.0, 0.0)).bits(), 0);
    }

    #[test]
    fn dir_dep_order_matches_lookup_tables() {
        let all_two = (0..16).fold(0u64, |acc, g| acc | (0b010 << (3 * g)));
        let all_four = (0..16).fold(0u64, |acc, g| acc | (0b100 << (3 * g)));
        let p = OctPath::new(all_two, 16).unwrap();
        assert_eq!(dir_dep_order(&p, SignBits(0b110)), all_four);
        assert_eq!(dir_dep_order(&p, SignBits(0)), all_two);
        for s in 0..8 {
            for code in [0u64, all_two, 0x5555_1234_abcd & CODE_MASK, CODE_MASK] {
                let p = OctPath { code, level: 16 };
                assert_eq!(dir_dep_order(&p, SignBits(s)), table_order(code, s));
            }
        }
    }

    #[test]
    fn voxel_geometry_examples() {
        let b = SceneBounds::new([0.5; 3], 1.0).unwrap();
        let (c, s) = voxel_geometry(&b, &VoxelIndex::new(0, 0, 0, 1).unwrap());
        assert_eq!(s, 0.5);
        assert_eq!(c, Vector3::new(0.25, 0.25, 0.25));
        let (c, _) = voxel_geometry(&b, &VoxelIndex::new(1, 1, 1, 1).unwrap());
        assert_eq!(c, Vector3::new(0.75, 0.75, 0.75));
    }

    #[test]
    fn children_geometry_and_ancestry() {
        let b = SceneBounds::new([0.0; 3], 2.0).unwrap();
        let root_child = OctPath::new(0, 1).unwrap();
        let kids = root_child.children().unwrap();
        let (pc, ps) = voxel_geometry(&b, &root_child.to_index());
        for (c, kid) in kids.iter().enumerate() {
            assert_eq!(kid.code(), (c as u64) << 42);
            assert_eq!(kid.level(), 2);
            assert!(root_child.is_ancestor_of(kid));
            assert_eq!(kid.parent(), Some(root_child));
            assert_eq!(kid.last_group() as usize, c);
            let (cc, cs) = voxel_geometry(&b, &kid.to_index());
            assert_eq!(cs, ps / 2.0);
            let (di, dj, dk) = corner_offset(c);
            let sign = |d: u32| if d == 1 { 1.0 } else { -1.0 };
            let expect = pc + Vector3::new(sign(di), sign(dj), sign(dk)) * (ps / 4.0);
            assert_eq!(cc, expect);
        }
        let a = OctPath::new(0b011 << 45, 1).unwrap();
        let bb = OctPath::new(0b101 << 45, 1).unwrap();
        assert!(!a.is_ancestor_of(&bb));
        assert!(!a.is_ancestor_of(&a));
        let deep = a.children().unwrap()[5].children().unwrap()[2];
        assert_eq!(deep.level(), 3);
        assert!(a.is_ancestor_of(&deep));
        assert!(!deep.is_ancestor_of(&a));
    }

    #[test]
    fn corner_keys_sharing_and_nesting() {
        let a = VoxelIndex::new(3, 4, 5, 4).unwrap();
        let b = VoxelIndex::new(4, 4, 5, 4).unwrap();
        let ka = a.corner_keys();
        let kb = b.corner_keys();
        let shared = ka.iter().filter(|k| kb.contains(k)).count();
        assert_eq!(shared, 4);

        let parent = to_octpath(a).unwrap();
        for (c, kid) in parent.children().unwrap().iter().enumerate() {
            // child c touches the parent's corner c
            assert_eq!(kid.to_index().corner_keys()[c], ka[c]);
        }
    }

    #[test]
    fn corner_keys_match_geometry() {
        let b = SceneBounds::new([0.5; 3], 1.0).unwrap();
        for level in 1..=6u8 {
            let v = VoxelIndex::new(1, (1 << level) - 1, 0, level).unwrap();
            let (c, s) = voxel_geometry(&b, &v);
            for (corner, key) in v.corner_keys().iter().enumerate() {
                let (di, dj, dk) = corner_offset(corner);
                let off = |d: u32| if d == 1 { 0.5 * s } else { -0.5 * s };
                let expect = c + Vector3::new(off(di), off(dj), off(dk));
                assert_eq!(b.key_position(*key), expect);
            }
        }
    }
}
