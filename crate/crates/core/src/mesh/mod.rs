//! Grid-native mesh extraction: level uniformization, Marching Cubes over the
//! sparse voxels, and TSDF fusion on the voxel grid points.

mod tables;
mod tsdf;

pub use tsdf::{tsdf_fuse, DepthView, TsdfField};

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::explin;
use crate::real::Real;
use crate::scene::SparseScene;
use tables::{EDGE_CORNERS, TABLE_TO_CORNER, TRI_TABLE};

/// Default limit on the voxel count produced by [`uniformize_levels`].
pub const DEFAULT_VOXEL_CAP: usize = 1 << 25;

/// Default iso value on the activated density.
pub const DEFAULT_DENSITY_ISO: f64 = 5.0;

/// Default TSDF truncation in finest-voxel sizes.
pub const DEFAULT_TRUNCATION_VOXELS: f64 = 4.0;

/// Where a Marching Cubes vertex lives on the finest lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexKey {
    /// On a grid point.
    Corner([u32; 3]),
    /// Strictly inside the edge between two grid points, lower key first.
    Edge([u32; 3], [u32; 3]),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Grid identity of each vertex for meshes from [`marching_cubes`];
    /// empty for other meshes.
    pub keys: Vec<VertexKey>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_counts(&self) -> HashMap<[u32; 2], usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *counts.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge bounds exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&n| n == 2)
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }
}

/// Subdivides every voxel until all share the finest level present. Fails
/// with a capacity error, leaving the scene untouched, when the result
/// would exceed `cap` voxels.
pub fn uniformize_levels<R: Real>(scene: &mut SparseScene<R>, cap: usize) -> Result<()> {
    let Some(top) = scene.max_level() else {
        return Ok(());
    };
    let projected: u128 = scene.octpaths.iter().map(|p| 1u128 << (3 * (top - p.level()) as u32)).sum();
    if projected > cap as u128 {
        return Err(Error::Capacity(format!("uniform level {top} needs {projected} voxels, cap is {cap}")));
    }
    loop {
        let coarse: Vec<usize> = (0..scene.len()).filter(|&v| scene.octpaths[v].level() < top).collect();
        if coarse.is_empty() {
            return Ok(());
        }
        scene.subdivide(&coarse);
    }
}

/// Scalar sampled by [`marching_cubes`].
#[derive(Clone, Copy, Debug)]
pub enum IsoField<'a> {
    /// Activated density; inside is above the iso value.
    Density,
    /// Fused signed distance; inside is below the iso value. Voxels with an
    /// unobserved corner are skipped.
    Tsdf(&'a TsdfField),
}

/// Marching Cubes inside every voxel of a single-level scene, followed by
/// [`dedup_vertices`]. Triangles are ordered by voxel octpath, then table
/// order. Faces point from inside to outside.
pub fn marching_cubes<R: Real>(scene: &SparseScene<R>, field: IsoField, iso: f64) -> Result<TriangleMesh> {
    if let Some(top) = scene.max_level() {
        if scene.octpaths.iter().any(|p| p.level() != top) {
            return Err(Error::invalid("marching cubes needs a single-level scene (uniformize first)"));
        }
    }
    // g < 0 means inside
    let g: Vec<f64> = match field {
        IsoField::Density => scene.density.iter().map(|d| iso - explin(d.to_f64())).collect(),
        IsoField::Tsdf(t) => {
            if t.sdf.len() != scene.pool_len() {
                return Err(Error::invalid("tsdf field does not match the scene's grid points"));
            }
            t.sdf.iter().map(|s| s - iso).collect()
        }
    };
    let observed = |v: usize| match field {
        IsoField::Tsdf(t) => scene.corner_index[v].iter().all(|&i| t.weight[i as usize] > 0.0),
        IsoField::Density => true,
    };
    let mut order: Vec<usize> = (0..scene.len()).collect();
    order.sort_unstable_by_key(|&v| scene.octpaths[v].code());
    let per_voxel: Vec<Vec<(Vector3<f64>, VertexKey)>> = order
        .par_iter()
        .map(|&v| if observed(v) { voxel_triangles(scene, v, &g) } else { Vec::new() })
        .collect();
    let mut mesh = TriangleMesh::default();
    for tri in per_voxel.into_iter().flatten() {
        let i = mesh.vertices.len() as u32;
        if i % 3 == 0 {
            mesh.triangles.push([i, i + 1, i + 2]);
        }
        mesh.vertices.push(tri.0);
        mesh.keys.push(tri.1);
    }
    Ok(dedup_vertices(&mesh))
}

/// Triangle corners of one voxel, three per triangle.
fn voxel_triangles<R: Real>(scene: &SparseScene<R>, v: usize, g: &[f64]) -> Vec<(Vector3<f64>, VertexKey)> {
    let idx = scene.corner_index[v];
    let vals: [f64; 8] = std::array::from_fn(|t| g[idx[TABLE_TO_CORNER[t]] as usize]);
    let case = (0..8).filter(|&t| vals[t] < 0.0).fold(0usize, |m, t| m | (1 << t));
    if case == 0 || case == 255 {
        return Vec::new();
    }
    let keys = scene.voxel_index(v).corner_keys();
    let pos = |t: usize| scene.bounds.key_position(keys[TABLE_TO_CORNER[t]]);
    let vertex = |e: usize| {
        let (a, b) = EDGE_CORNERS[e];
        let (ka, kb) = (keys[TABLE_TO_CORNER[a]], keys[TABLE_TO_CORNER[b]]);
        // interpolate from the lower key so both voxels sharing the edge agree bit for bit
        let (a, b, ka, kb) = if ka <= kb { (a, b, ka, kb) } else { (b, a, kb, ka) };
        let t = vals[a] / (vals[a] - vals[b]);
        if t <= 0.0 {
            (pos(a), VertexKey::Corner(ka))
        } else if t >= 1.0 {
            (pos(b), VertexKey::Corner(kb))
        } else {
            (pos(a) + (pos(b) - pos(a)) * t, VertexKey::Edge(ka, kb))
        }
    };
    TRI_TABLE[case]
        .iter()
        .take_while(|&&e| e >= 0)
        .map(|&e| vertex(e as usize))
        .collect::<Vec<_>>()
        .chunks_exact(3)
        // the table winds clockwise seen from the low side
        .flat_map(|c| [c[0], c[2], c[1]])
        .collect()
}

/// Merges vertices with the same grid identity (or, for meshes without
/// keys, bitwise-equal positions), keeping first-appearance order, and drops
/// triangles that become degenerate.
pub fn dedup_vertices(mesh: &TriangleMesh) -> TriangleMesh {
    let keyed = mesh.keys.len() == mesh.vertices.len();
    let mut by_key: HashMap<VertexKey, u32> = HashMap::new();
    let mut by_pos: HashMap<[u64; 3], u32> = HashMap::new();
    let mut out = TriangleMesh::default();
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &i in t {
            let i = i as usize;
            if remap[i] != u32::MAX {
                continue;
            }
            let next = out.vertices.len() as u32;
            let slot = if keyed {
                *by_key.entry(mesh.keys[i]).or_insert(next)
            } else {
                *by_pos.entry(mesh.vertices[i].map(f64::to_bits).into()).or_insert(next)
            };
            if slot == next {
                out.vertices.push(mesh.vertices[i]);
                if keyed {
                    out.keys.push(mesh.keys[i]);
                }
            }
            remap[i] = slot;
        }
    }
    out.triangles = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| remap[i as usize]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{to_octpath, OctPath, SceneBounds, VoxelIndex};
    use crate::scene::{voxel_field_at, VoxelLookup};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(level: u8, bounds: SceneBounds) -> SparseScene<f64> {
        let n = 1u32 << level;
        let mut v: Vec<OctPath> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(to_octpath(VoxelIndex::new(i, j, k, level).unwrap()).unwrap());
                }
            }
        }
        SparseScene::from_voxels(bounds, 0, &v, 0.0, &[0.0; 3]).unwrap()
    }

    /// Dense scene whose raw density is `f` at the grid points.
    fn sampled(level: u8, f: impl Fn(&Vector3<f64>) -> f64) -> SparseScene<f64> {
        let mut s = dense(level, SceneBounds::new([0.0; 3], 2.0).unwrap());
        let pos = s.pool_positions();
        for (d, p) in s.density.iter_mut().zip(&pos) {
            *d = f(p);
        }
        s
    }

    fn sphere_raw(r: f64) -> impl Fn(&Vector3<f64>) -> f64 {
        // activated density 5 on the sphere, increasing inward
        move |p| 5.0 + 10.0 * (r - p.norm())
    }

    #[test]
    fn uniform_scene_is_untouched() {
        let mut s = sampled(2, |p| p.x);
        let before = s.clone();
        uniformize_levels(&mut s, DEFAULT_VOXEL_CAP).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn coarse_voxel_becomes_children() {
        let mut s = sampled(1, |p| p.x * 2.0 - p.y + 0.5 * p.z);
        s.subdivide(&[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(s.len(), 57);
        let lookup = VoxelLookup::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let field = |s: &SparseScene<f64>, l: &VoxelLookup| -> Vec<f64> {
            pts.iter().map(|p| voxel_field_at(s, l.find(p).unwrap(), p)).collect()
        };
        let before = field(&s, &lookup);
        uniformize_levels(&mut s, DEFAULT_VOXEL_CAP).unwrap();
        s.validate().unwrap();
        assert_eq!(s.len(), 64);
        assert!(s.octpaths.iter().all(|p| p.level() == 2));
        for (a, b) in before.iter().zip(field(&s, &VoxelLookup::new(&s))) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut s = sampled(1, |_| 0.0);
        s.subdivide(&[0]);
        s.subdivide(&[s.len() - 1]);
        let before = s.clone();
        assert!(matches!(uniformize_levels(&mut s, 100), Err(Error::Capacity(_))));
        assert_eq!(s, before);
        uniformize_levels(&mut s, 512).unwrap();
        assert_eq!(s.len(), 512);
    }

    #[test]
    fn empty_and_full_cases() {
        let s = sampled(2, |_| -10.0);
        assert!(marching_cubes(&s, IsoField::Density, 5.0).unwrap().is_empty());
        let s = sampled(2, |_| 50.0);
        assert!(marching_cubes(&s, IsoField::Density, 5.0).unwrap().is_empty());
    }

    #[test]
    fn one_corner_gives_one_triangle() {
        let mut s = sampled(1, |_| -10.0);
        s.density[s.corner_index[0][0] as usize] = 20.0;
        let m = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert_eq!(m.vertices.len(), 3);
        // each vertex sits on one of the three edges at the corner
        for v in &m.vertices {
            let on_axes = v.iter().filter(|c| **c == -1.0).count();
            assert_eq!(on_axes, 2, "{v:?}");
        }
        // faces point away from the inside corner
        let t = m.triangles[0].map(|i| m.vertices[i as usize]);
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        assert!(n.dot(&Vector3::new(1.0, 1.0, 1.0)) > 0.0);
    }

    #[test]
    fn shared_edge_vertex_is_merged() {
        let mut s = sampled(1, |_| -10.0);
        // grid point at the root center is shared by all eight voxels
        let center = s.pool_keys().iter().position(|k| *k == [1 << 15; 3]).unwrap();
        s.density[center] = 20.0;
        let m = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
        assert_eq!(m.triangles.len(), 8);
        // six vertices, one per axis edge through the center
        assert_eq!(m.vertices.len(), 6);
        assert!(m.is_closed_manifold());
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let r = 0.55;
        let s = sampled(5, sphere_raw(r));
        let m = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
        let h = 2.0 / 32.0;
        for v in &m.vertices {
            assert!((v.norm() - r).abs() < 0.5 * h * 3f64.sqrt());
        }
        assert!(m.is_closed_manifold());
        assert_eq!(m.euler_characteristic(), 2);
        for t in &m.triangles {
            let p = t.map(|i| m.vertices[i as usize]);
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            assert!(n.dot(&(p[0] + p[1] + p[2])) > 0.0, "inward face");
        }
    }

    #[test]
    fn flipped_field_flips_orientation() {
        let r = 0.47;
        let s = sampled(4, sphere_raw(r));
        let a = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
        let mut flipped = s.clone();
        // same zero set, inside and outside swapped
        let pos = flipped.pool_positions();
        for (d, p) in flipped.density.iter_mut().zip(&pos) {
            *d = 5.0 - 10.0 * (r - p.norm());
        }
        let b = marching_cubes(&flipped, IsoField::Density, 5.0).unwrap();
        assert_eq!(a.vertices.len(), b.vertices.len());
        let index: HashMap<VertexKey, usize> = b.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        for (va, ka) in a.vertices.iter().zip(&a.keys) {
            assert!((va - b.vertices[index[ka]]).norm() < 1e-12);
        }
        let canon = |m: &TriangleMesh, t: &[u32; 3]| {
            let k = t.map(|i| m.keys[i as usize]);
            let r = (0..3).min_by_key(|&i| k[i]).unwrap();
            [k[r], k[(r + 1) % 3], k[(r + 2) % 3]]
        };
        let mut ta: Vec<_> = a.triangles.iter().map(|t| canon(&a, &[t[0], t[2], t[1]])).collect();
        let mut tb: Vec<_> = b.triangles.iter().map(|t| canon(&b, t)).collect();
        ta.sort();
        tb.sort();
        assert_eq!(ta, tb);
    }

    #[test]
    fn mixed_levels_are_rejected() {
        let mut s = sampled(1, |_| 0.0);
        s.subdivide(&[0]);
        assert!(marching_cubes(&s, IsoField::Density, 5.0).is_err());
    }

    #[test]
    fn dedup_without_keys() {
        let v = |x: f64| Vector3::new(x, 0.0, 1.0);
        let m = TriangleMesh {
            vertices: vec![v(0.0), v(1.0), v(2.0), v(3.0)],
            triangles: vec![[0, 1, 2], [1, 3, 2]],
            keys: Vec::new(),
        };
        assert_eq!(dedup_vertices(&m), m);
        let m2 = TriangleMesh {
            vertices: vec![v(0.0), v(1.0), v(2.0), v(1.0), v(3.0), v(2.0), v(1.0)],
            triangles: vec![[0, 1, 2], [3, 4, 5], [6, 6, 0]],
            keys: Vec::new(),
        };
        assert_eq!(dedup_vertices(&m2), m);
    }
}
