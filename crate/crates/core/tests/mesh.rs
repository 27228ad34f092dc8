mod common;

use common::{dense_voxels, random_voxels, sphere_cameras, sphere_depth_map};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsevox::mesh::{
    marching_cubes, tsdf_fuse, uniformize_levels, DepthView, IsoField, DEFAULT_TRUNCATION_VOXELS, DEFAULT_VOXEL_CAP,
};
use sparsevox::octree::SceneBounds;
use sparsevox::scene::{voxel_field_at, VoxelLookup};
use sparsevox::SparseScene;

fn unit_scene(level: u8) -> SparseScene<f64> {
    let b = SceneBounds::new([0.5; 3], 1.0).unwrap();
    SparseScene::from_voxels(b, 0, &dense_voxels(level), 0.0, &[0.0; 3]).unwrap()
}

fn radial_rms(vertices: &[Vector3<f64>], c: &Vector3<f64>, r: f64) -> f64 {
    (vertices.iter().map(|v| ((v - c).norm() - r).powi(2)).sum::<f64>() / vertices.len() as f64).sqrt()
}

#[test]
fn tsdf_sphere_pipeline() {
    let s = unit_scene(6);
    let c = Vector3::new(0.5, 0.5, 0.5);
    let views: Vec<DepthView> = sphere_cameras(20, &c, 1.5, 128, 50.0)
        .into_iter()
        .map(|camera| DepthView {
            depth: sphere_depth_map(&camera, &c, 0.3, 1e10),
            camera,
        })
        .collect();
    let h = 1.0 / 64.0;
    let f = tsdf_fuse(&s, &views, DEFAULT_TRUNCATION_VOXELS * h).unwrap();
    assert!(f.sdf.iter().all(|d| d.abs() <= f.truncation));
    let m = marching_cubes(&s, IsoField::Tsdf(&f), 0.0).unwrap();
    let rms = radial_rms(&m.vertices, &c, 0.3);
    assert!(rms < h, "rms {rms}");
    assert!(m.is_closed_manifold());
    assert_eq!(m.euler_characteristic(), 2);
}

#[test]
fn density_sphere_after_uniformize() {
    // coarse everywhere except a refined shell; the field is a sampled radial ramp
    let mut s = unit_scene(3);
    let c = Vector3::new(0.5, 0.5, 0.5);
    for _ in 0..2 {
        let near: Vec<usize> = (0..s.len())
            .filter(|&v| {
                let (p, size) = s.geometry(v);
                ((p - c).norm() - 0.3).abs() < size
            })
            .collect();
        s.subdivide(&near);
    }
    let pos = s.pool_positions();
    for (d, p) in s.density.iter_mut().zip(&pos) {
        *d = 5.0 + 40.0 * (0.3 - (p - c).norm());
    }
    uniformize_levels(&mut s, DEFAULT_VOXEL_CAP).unwrap();
    assert!(s.octpaths.iter().all(|p| p.level() == 5));
    let m = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
    assert!(m.is_closed_manifold());
    assert_eq!(m.euler_characteristic(), 2);
    assert!(radial_rms(&m.vertices, &c, 0.3) < 1.0 / 32.0);
}

#[test]
fn uniformize_preserves_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        // multi-level scene made by subdivision, so the field is continuous
        let mut s = unit_scene(2);
        for d in s.density.iter_mut() {
            *d = rng.gen_range(-3.0..3.0);
        }
        for _ in 0..2 {
            let pick: Vec<usize> = (0..s.len()).filter(|_| rng.gen_bool(0.2)).collect();
            s.subdivide(&pick);
        }
        let lookup = VoxelLookup::new(&s);
        let pts: Vec<Vector3<f64>> = (0..2000).map(|_| Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0))).collect();
        let before: Vec<f64> = pts.iter().map(|p| voxel_field_at(&s, lookup.find(p).unwrap(), p)).collect();
        uniformize_levels(&mut s, DEFAULT_VOXEL_CAP).unwrap();
        s.validate().unwrap();
        let lookup = VoxelLookup::new(&s);
        for (p, b) in pts.iter().zip(before) {
            assert!((voxel_field_at(&s, lookup.find(p).unwrap(), p) - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn sparse_scene_mesh_stays_inside_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let voxels = random_voxels(&mut rng, 3, 200, 0.6);
    let b = SceneBounds::new([0.0; 3], 2.0).unwrap();
    let mut s = SparseScene::<f64>::from_voxels(b, 0, &voxels, 0.0, &[0.0; 3]).unwrap();
    let pos = s.pool_positions();
    for (d, p) in s.density.iter_mut().zip(&pos) {
        *d = 5.0 + 10.0 * (0.7 - p.norm());
    }
    uniformize_levels(&mut s, DEFAULT_VOXEL_CAP).unwrap();
    let m = marching_cubes(&s, IsoField::Density, 5.0).unwrap();
    let lookup = VoxelLookup::new(&s);
    let h = 2.0 / 8.0;
    assert!(!m.is_empty());
    for v in &m.vertices {
        assert!((v.norm() - 0.7).abs() < h);
    }
    for t in &m.triangles {
        let centroid = t.iter().map(|&i| m.vertices[i as usize]).sum::<Vector3<f64>>() / 3.0;
        assert!(lookup.find(&centroid).is_some(), "triangle outside the sparse voxels");
    }
    assert_eq!(m.triangles.len(), {
        let mut n = m.triangles.clone();
        n.sort();
        n.dedup();
        n.len()
    });
}
