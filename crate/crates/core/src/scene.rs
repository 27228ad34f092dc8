//! The sparse voxel scene: leaf voxels, a shared corner-density pool and
//! per-voxel SH coefficients.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::field::{explin, sh_coeff_count, trilinear, CornerDensities, MAX_SH_DEGREE};
use crate::octree::{is_ancestor, to_octpath, voxel_geometry, OctPath, SceneBounds, VoxelIndex, MAX_LEVEL};
use crate::real::Real;

/// Largest voxel count the sort-key layout can address.
pub const MAX_VOXELS: usize = 1 << 29;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseScene<R: Real> {
    pub bounds: SceneBounds,
    pub sh_degree: usize,
    pub octpaths: Vec<OctPath>,
    /// Per voxel, 8 pool indices in `4*i + 2*j + k` corner order.
    pub corner_index: Vec<[u32; 8]>,
    /// Raw density per unique grid point.
    pub density: Vec<R>,
    /// `voxel * sh_stride() + coeff * 3 + channel`.
    pub sh: Vec<R>,
}

/// Where each entry of an adapted scene came from, for carrying optimizer
/// state across pruning and subdivision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Remap {
    /// Old voxel each new voxel copies its appearance from; children point
    /// at their parent.
    pub voxel_source: Vec<Option<usize>>,
    /// Old pool entry of each grid point, `None` for interpolated ones.
    pub pool_source: Vec<Option<usize>>,
}

impl<R: Real> SparseScene<R> {
    pub fn empty(bounds: SceneBounds, sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid(format!("SH degree {sh_degree} exceeds {MAX_SH_DEGREE}")));
        }
        Ok(SparseScene {
            bounds,
            sh_degree,
            octpaths: Vec::new(),
            corner_index: Vec::new(),
            density: Vec::new(),
            sh: Vec::new(),
        })
    }

    /// Builds a scene from leaf voxels, deduplicating corners by key. Pool
    /// entries are created in first-seen order, all set to `density`; every
    /// voxel gets a copy of `sh_template` (length `sh_stride()`).
    pub fn from_voxels(
        bounds: SceneBounds,
        sh_degree: usize,
        voxels: &[OctPath],
        density: R,
        sh_template: &[R],
    ) -> Result<Self> {
        let mut scene = Self::empty(bounds, sh_degree)?;
        if sh_template.len() != scene.sh_stride() {
            return Err(Error::invalid(format!(
                "SH template has {} values, expected {}",
                sh_template.len(),
                scene.sh_stride()
            )));
        }
        if voxels.len() >= MAX_VOXELS {
            return Err(Error::Capacity(format!("{} voxels exceed the limit of {MAX_VOXELS}", voxels.len())));
        }
        leaf_only(voxels).map_err(Error::invalid)?;
        let mut keys: HashMap<[u32; 3], u32> = HashMap::with_capacity(voxels.len() * 2);
        scene.octpaths = voxels.to_vec();
        scene.corner_index.reserve(voxels.len());
        scene.sh.reserve(voxels.len() * sh_template.len());
        for p in voxels {
            let ck = p.to_index().corner_keys();
            let mut idx = [0u32; 8];
            for c in 0..8 {
                let next = keys.len() as u32;
                idx[c] = *keys.entry(ck[c]).or_insert(next);
            }
            scene.corner_index.push(idx);
            scene.sh.extend_from_slice(sh_template);
        }
        scene.density = vec![density; keys.len()];
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.octpaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.octpaths.is_empty()
    }

    pub fn pool_len(&self) -> usize {
        self.density.len()
    }

    pub fn sh_stride(&self) -> usize {
        sh_coeff_count(self.sh_degree) * 3
    }

    pub fn sh_coeffs(&self, voxel: usize) -> &[R] {
        let s = self.sh_stride();
        &self.sh[voxel * s..(voxel + 1) * s]
    }

    pub fn sh_coeffs_mut(&mut self, voxel: usize) -> &mut [R] {
        let s = self.sh_stride();
        &mut self.sh[voxel * s..(voxel + 1) * s]
    }

    pub fn voxel_index(&self, voxel: usize) -> VoxelIndex {
        self.octpaths[voxel].to_index()
    }

    pub fn geometry(&self, voxel: usize) -> (Vector3<f64>, f64) {
        voxel_geometry(&self.bounds, &self.voxel_index(voxel))
    }

    pub fn corner_densities(&self, voxel: usize) -> CornerDensities<R> {
        self.corner_index[voxel].map(|i| self.density[i as usize])
    }

    pub fn max_level(&self) -> Option<u8> {
        self.octpaths.iter().map(|p| p.level()).max()
    }

    /// Corner key of every pool entry.
    pub fn pool_keys(&self) -> Vec<[u32; 3]> {
        let mut keys = vec![[u32::MAX; 3]; self.pool_len()];
        for (p, idx) in self.octpaths.iter().zip(&self.corner_index) {
            let ck = p.to_index().corner_keys();
            for c in 0..8 {
                keys[idx[c] as usize] = ck[c];
            }
        }
        keys
    }

    /// World position of every pool entry.
    pub fn pool_positions(&self) -> Vec<Vector3<f64>> {
        self.pool_keys().into_iter().map(|k| self.bounds.key_position(k)).collect()
    }

    /// Leaf-only, corner-pool and array-shape invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.corner_index.len() != n || self.sh.len() != n * self.sh_stride() {
            return Err(Error::InvalidState("voxel array lengths disagree".into()));
        }
        if n >= MAX_VOXELS {
            return Err(Error::Capacity(format!("{n} voxels exceed the limit of {MAX_VOXELS}")));
        }
        leaf_only(&self.octpaths).map_err(Error::InvalidState)?;
        let mut key_of: Vec<Option<[u32; 3]>> = vec![None; self.pool_len()];
        let mut index_of: HashMap<[u32; 3], u32> = HashMap::new();
        for (p, idx) in self.octpaths.iter().zip(&self.corner_index) {
            let ck = p.to_index().corner_keys();
            for c in 0..8 {
                let i = idx[c];
                let slot = key_of
                    .get_mut(i as usize)
                    .ok_or_else(|| Error::InvalidState(format!("corner index {i} out of range")))?;
                match slot {
                    Some(k) if *k != ck[c] => {
                        return Err(Error::InvalidState(format!("pool entry {i} shared by distinct grid points")))
                    }
                    _ => *slot = Some(ck[c]),
                }
                if *index_of.entry(ck[c]).or_insert(i) != i {
                    return Err(Error::InvalidState(format!("grid point {:?} has two pool entries", ck[c])));
                }
            }
        }
        if let Some(orphan) = key_of.iter().position(Option::is_none) {
            return Err(Error::InvalidState(format!("pool entry {orphan} belongs to no voxel")));
        }
        Ok(())
    }

    /// Keeps voxels where `keep` is true and compacts the pool.
    pub fn retain(&mut self, keep: &[bool]) -> Remap {
        assert_eq!(keep.len(), self.len());
        let stride = self.sh_stride();
        let mut remap = Remap::default();
        let mut pool_new = vec![u32::MAX; self.pool_len()];
        let mut octpaths = Vec::new();
        let mut corner_index = Vec::new();
        let mut sh = Vec::new();
        let mut density = Vec::new();
        for v in 0..self.len() {
            if !keep[v] {
                continue;
            }
            remap.voxel_source.push(Some(v));
            octpaths.push(self.octpaths[v]);
            sh.extend_from_slice(&self.sh[v * stride..(v + 1) * stride]);
            let idx = self.corner_index[v].map(|old| {
                let slot = &mut pool_new[old as usize];
                if *slot == u32::MAX {
                    *slot = density.len() as u32;
                    density.push(self.density[old as usize]);
                    remap.pool_source.push(Some(old as usize));
                }
                *slot
            });
            corner_index.push(idx);
        }
        self.octpaths = octpaths;
        self.corner_index = corner_index;
        self.sh = sh;
        self.density = density;
        remap
    }

    /// Replaces each listed voxel by its 8 children. Child corner densities
    /// come from the parent's trilinear field; grid points that already exist
    /// keep their value, new ones shared by several subdivided parents take
    /// the mean. Level-16 voxels are skipped. Survivors keep their order and
    /// children are appended in list order.
    pub fn subdivide(&mut self, voxels: &[usize]) -> Remap {
        let stride = self.sh_stride();
        let mut split = vec![false; self.len()];
        for &v in voxels {
            if self.octpaths[v].level() < MAX_LEVEL {
                split[v] = true;
            }
        }
        let mut keys: HashMap<[u32; 3], u32> = HashMap::with_capacity(self.pool_len());
        for (p, idx) in self.octpaths.iter().zip(&self.corner_index) {
            let ck = p.to_index().corner_keys();
            for c in 0..8 {
                keys.insert(ck[c], idx[c]);
            }
        }
        let old_pool = self.pool_len();
        let mut sums: Vec<(R, u32)> = Vec::new();
        let mut children = Vec::new();
        let mut child_corners = Vec::new();
        let mut child_sh_src = Vec::new();
        for (v, _) in split.iter().enumerate().filter(|(_, s)| **s) {
            let parent = self.corner_densities(v);
            for (c, child) in self.octpaths[v].children().expect("level checked").into_iter().enumerate() {
                let ck = child.to_index().corner_keys();
                let offs = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
                let mut idx = [0u32; 8];
                for corner in 0..8 {
                    let next = (old_pool + sums.len()) as u32;
                    let slot = *keys.entry(ck[corner]).or_insert(next);
                    if slot == next {
                        sums.push((R::zero(), 0));
                    }
                    if slot as usize >= old_pool {
                        let q = Vector3::new(
                            R::of((offs[0] + (corner >> 2)) as f64 * 0.5),
                            R::of((offs[1] + ((corner >> 1) & 1)) as f64 * 0.5),
                            R::of((offs[2] + (corner & 1)) as f64 * 0.5),
                        );
                        let s = &mut sums[slot as usize - old_pool];
                        s.0 += trilinear(&parent, &q);
                        s.1 += 1;
                    }
                    idx[corner] = slot;
                }
                children.push(child);
                child_corners.push(idx);
                child_sh_src.push(v);
            }
        }
        self.density.extend(sums.iter().map(|(s, n)| *s / R::of(*n as f64)));
        let mut remap = Remap {
            voxel_source: Vec::new(),
            pool_source: (0..old_pool).map(Some).chain(std::iter::repeat(None).take(sums.len())).collect(),
        };
        let mut octpaths = Vec::with_capacity(self.len() + children.len());
        let mut corner_index = Vec::with_capacity(octpaths.capacity());
        let mut sh = Vec::with_capacity(octpaths.capacity() * stride);
        for v in 0..self.len() {
            if !split[v] {
                remap.voxel_source.push(Some(v));
                octpaths.push(self.octpaths[v]);
                corner_index.push(self.corner_index[v]);
                sh.extend_from_slice(&self.sh[v * stride..(v + 1) * stride]);
            }
        }
        for ((child, idx), src) in children.into_iter().zip(child_corners).zip(child_sh_src) {
            remap.voxel_source.push(Some(src));
            octpaths.push(child);
            corner_index.push(idx);
            sh.extend_from_slice(&self.sh[src * stride..(src + 1) * stride]);
        }
        self.octpaths = octpaths;
        self.corner_index = corner_index;
        self.sh = sh;
        remap
    }

    /// Reorders voxels: new voxel `i` is old voxel `order[i]`. The pool is
    /// left untouched.
    pub fn permute(&mut self, order: &[usize]) {
        let stride = self.sh_stride();
        self.octpaths = order.iter().map(|&v| self.octpaths[v]).collect();
        self.corner_index = order.iter().map(|&v| self.corner_index[v]).collect();
        self.sh = order.iter().flat_map(|&v| self.sh[v * stride..(v + 1) * stride].to_vec()).collect();
    }

    pub fn cast<S: Real>(&self) -> SparseScene<S> {
        SparseScene {
            bounds: self.bounds,
            sh_degree: self.sh_degree,
            octpaths: self.octpaths.clone(),
            corner_index: self.corner_index.clone(),
            density: self.density.iter().map(|x| S::of(x.to_f64())).collect(),
            sh: self.sh.iter().map(|x| S::of(x.to_f64())).collect(),
        }
    }

    pub fn lookup(&self) -> VoxelLookup {
        VoxelLookup::new(self)
    }
}

/// No duplicates and no ancestor pairs.
fn leaf_only(paths: &[OctPath]) -> std::result::Result<(), String> {
    let mut sorted = paths.to_vec();
    sorted.sort_by_key(|p| (p.code(), p.level()));
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(format!("duplicate voxel {:?}", w[0]));
        }
        // descendants sort directly after their ancestor
        if is_ancestor(&w[0], &w[1]) {
            return Err(format!("voxel {:?} is an ancestor of {:?}", w[0], w[1]));
        }
    }
    Ok(())
}

/// Point location over the leaf voxels.
pub struct VoxelLookup {
    bounds: SceneBounds,
    map: HashMap<OctPath, usize>,
    levels: Vec<u8>,
}

impl VoxelLookup {
    pub fn new<R: Real>(scene: &SparseScene<R>) -> Self {
        let map: HashMap<OctPath, usize> = scene.octpaths.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut levels: Vec<u8> = scene.octpaths.iter().map(|p| p.level()).collect();
        levels.sort_unstable();
        levels.dedup();
        VoxelLookup {
            bounds: scene.bounds,
            map,
            levels,
        }
    }

    /// Voxel containing world point `p` (ties on faces go to the upper cell).
    pub fn find(&self, p: &Vector3<f64>) -> Option<usize> {
        let rel = (p - self.bounds.min_corner()) / self.bounds.size;
        if rel.iter().any(|x| !(0.0..1.0).contains(x)) {
            return None;
        }
        for &lv in &self.levels {
            let n = (1u32 << lv) as f64;
            let idx = rel.map(|x| ((x * n) as u32).min((1u32 << lv) - 1));
            let v = VoxelIndex {
                i: idx.x,
                j: idx.y,
                k: idx.z,
                level: lv,
            };
            if let Some(&found) = to_octpath(v).ok().and_then(|p| self.map.get(&p)) {
                return Some(found);
            }
        }
        None
    }
}

/// Raw trilinear density of `voxel` at world point `p`.
pub fn voxel_field_at<R: Real>(scene: &SparseScene<R>, voxel: usize, p: &Vector3<f64>) -> f64 {
    let (center, size) = scene.geometry(voxel);
    let q = (p - center.add_scalar(-0.5 * size)) / size;
    let v = scene.corner_densities(voxel).map(|x| x.to_f64());
    trilinear(&v, &q)
}

/// Activated density at a world point; zero outside every voxel.
pub fn density_at<R: Real>(scene: &SparseScene<R>, lookup: &VoxelLookup, p: &Vector3<f64>) -> f64 {
    lookup.find(p).map_or(0.0, |v| explin(voxel_field_at(scene, v, p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(level: u8) -> Vec<OctPath> {
        let n = 1u32 << level;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(to_octpath(VoxelIndex::new(i, j, k, level).unwrap()).unwrap());
                }
            }
        }
        out
    }

    fn unit_bounds() -> SceneBounds {
        SceneBounds::new([0.5; 3], 1.0).unwrap()
    }

    #[test]
    fn dense_pool_size() {
        let s = SparseScene::<f32>::from_voxels(unit_bounds(), 0, &dense(3), -10.0, &[0.0; 3]).unwrap();
        assert_eq!(s.len(), 512);
        assert_eq!(s.pool_len(), 729);
        s.validate().unwrap();
    }

    #[test]
    fn validate_rejects_ancestors_and_bad_pools() {
        let root = OctPath::new(0, 1).unwrap();
        let child = root.children().unwrap()[3];
        assert!(SparseScene::<f64>::from_voxels(unit_bounds(), 0, &[root, child], 0.0, &[0.0; 3]).is_err());
        let mut s = SparseScene::<f64>::from_voxels(unit_bounds(), 0, &[root], 0.0, &[0.0; 3]).unwrap();
        s.octpaths.push(child);
        s.corner_index.push(s.corner_index[0]);
        s.sh.extend([0.0; 3]);
        assert!(s.validate().is_err());

        let mut s = SparseScene::<f64>::from_voxels(unit_bounds(), 0, &dense(1), 0.0, &[0.0; 3]).unwrap();
        s.density.push(1.0);
        assert!(s.validate().is_err());
        s.density.pop();
        s.corner_index[0][7] = s.corner_index[0][6];
        assert!(s.validate().is_err());
    }

    #[test]
    fn retain_compacts_pool() {
        let mut s = SparseScene::<f64>::from_voxels(unit_bounds(), 0, &dense(1), 0.0, &[0.0; 3]).unwrap();
        for (i, d) in s.density.iter_mut().enumerate() {
            *d = i as f64;
        }
        let before: Vec<_> = (0..8).map(|v| s.corner_densities(v)).collect();
        let keep = [true, false, false, false, false, false, false, true];
        let remap = s.retain(&keep);
        s.validate().unwrap();
        assert_eq!(s.len(), 2);
        // the two voxels touch at the root center
        assert_eq!(s.pool_len(), 15);
        assert_eq!(s.corner_densities(0), before[0]);
        assert_eq!(s.corner_densities(1), before[7]);
        assert_eq!(remap.voxel_source, vec![Some(0), Some(7)]);
        let all = s.retain(&[true, true]);
        assert_eq!(all.pool_source.len(), 15);
    }

    #[test]
    fn subdivide_preserves_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = SparseScene::<f64>::from_voxels(unit_bounds(), 1, &dense(2), 0.0, &[0.25; 12]).unwrap();
        for d in s.density.iter_mut() {
            *d = rng.gen_range(-5.0..5.0);
        }
        let samples: Vec<Vector3<f64>> =
            (0..2000).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let field = |s: &SparseScene<f64>| {
            let l = s.lookup();
            samples
                .iter()
                .map(|p| voxel_field_at(s, l.find(p).unwrap(), p))
                .collect::<Vec<_>>()
        };
        let before = field(&s);
        for round in 0..3 {
            let n = s.len();
            let pick: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
            s.subdivide(&pick);
            s.validate().unwrap();
            assert_eq!(s.len(), n + 7 * pick.len(), "round {round}");
            for (a, b) in before.iter().zip(field(&s)) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
        assert!(s.sh.iter().all(|&c| c == 0.25));
    }

    #[test]
    fn subdivide_skips_finest_level() {
        let p = to_octpath(VoxelIndex::new(5, 5, 5, MAX_LEVEL).unwrap()).unwrap();
        let mut s = SparseScene::<f32>::from_voxels(unit_bounds(), 0, &[p], 0.0, &[0.0; 3]).unwrap();
        s.subdivide(&[0]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn lookup_finds_containing_leaf() {
        let mut voxels = dense(1);
        let first = voxels.remove(0);
        voxels.extend(first.children().unwrap());
        let s = SparseScene::<f32>::from_voxels(unit_bounds(), 0, &voxels, 0.0, &[0.0; 3]).unwrap();
        let l = s.lookup();
        let v = l.find(&Vector3::new(0.1, 0.1, 0.1)).unwrap();
        assert_eq!(s.octpaths[v].level(), 2);
        let v = l.find(&Vector3::new(0.9, 0.1, 0.6)).unwrap();
        assert_eq!(s.octpaths[v].level(), 1);
        assert!(l.find(&Vector3::new(1.5, 0.1, 0.6)).is_none());
    }
}
