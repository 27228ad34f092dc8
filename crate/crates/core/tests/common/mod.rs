#![allow(dead_code)]

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use sparsevox::camera::Camera;
use sparsevox::octree::{to_octpath, OctPath, SceneBounds, VoxelIndex};
use sparsevox::{Real, SparseScene};

pub fn unit_bounds() -> SceneBounds {
    SceneBounds::new([0.0; 3], 2.0).unwrap()
}

/// Non-overlapping multi-level voxel set: random subdivision from the level-1
/// octants up to `max_level`, then random removal.
pub fn random_voxels(rng: &mut impl Rng, max_level: u8, target: usize, keep: f64) -> Vec<OctPath> {
    let mut voxels: Vec<OctPath> = (0..8u64).map(|c| OctPath::new(c << 45, 1).unwrap()).collect();
    let mut guard = 0;
    while voxels.len() + 7 <= target && guard < 100_000 {
        guard += 1;
        let i = rng.gen_range(0..voxels.len());
        if voxels[i].level() >= max_level {
            continue;
        }
        let p = voxels.swap_remove(i);
        voxels.extend(p.children().unwrap());
    }
    voxels.retain(|_| rng.gen_bool(keep));
    if voxels.is_empty() {
        voxels.push(OctPath::new(0, 1).unwrap());
    }
    voxels.shuffle(rng);
    voxels
}

/// Dense grid of every voxel at `level`.
pub fn dense_voxels(level: u8) -> Vec<OctPath> {
    let n = 1u32 << level;
    let mut out = Vec::with_capacity((n * n * n) as usize);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(to_octpath(VoxelIndex::new(i, j, k, level).unwrap()).unwrap());
            }
        }
    }
    out
}

pub fn random_scene<R: Real>(
    rng: &mut impl Rng,
    bounds: SceneBounds,
    voxels: &[OctPath],
    sh_degree: usize,
    density: std::ops::Range<f64>,
) -> SparseScene<R> {
    let stride = (sh_degree + 1) * (sh_degree + 1) * 3;
    let mut s = SparseScene::<R>::from_voxels(bounds, sh_degree, voxels, R::zero(), &vec![R::zero(); stride]).unwrap();
    for d in s.density.iter_mut() {
        *d = R::of(rng.gen_range(density.clone()));
    }
    for v in 0..s.len() {
        let c = s.sh_coeffs_mut(v);
        for (i, x) in c.iter_mut().enumerate() {
            // positive DC keeps the colors away from the clamp
            *x = R::of(if i < 3 { rng.gen_range(1.0..3.0) } else { rng.gen_range(-0.3..0.3) });
        }
    }
    s
}

/// Camera outside the bounds looking roughly at the center.
pub fn random_camera(rng: &mut impl Rng, bounds: &SceneBounds, width: u32, height: u32) -> Camera {
    let c = Vector3::from(bounds.center);
    loop {
        let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if d.norm() < 0.2 || d.norm() > 1.0 {
            continue;
        }
        let eye = c + d.normalize() * bounds.size * rng.gen_range(1.0..2.0);
        let jitter = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)) * bounds.size;
        let up = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if let Ok(cam) = Camera::look_at(width, height, rng.gen_range(40.0..80.0), eye, c + jitter, up) {
            return cam;
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Camera-space z of the first hit with a sphere per pixel; misses get `far`.
pub fn sphere_depth_map(cam: &Camera, center: &Vector3<f64>, radius: f64, far: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity((cam.width * cam.height) as usize);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam.pixel_ray(x as f64, y as f64);
            let oc = ray.origin - center;
            let a = ray.dir.norm_squared();
            let b = 2.0 * oc.dot(&ray.dir);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - 4.0 * a * c;
            // pixel rays have unit camera-space z, so t is the depth
            out.push(if disc < 0.0 { far } else { (-b - disc.sqrt()) / (2.0 * a) });
        }
    }
    out
}

/// Cameras on a Fibonacci sphere around `center`, looking at it.
pub fn sphere_cameras(n: usize, center: &Vector3<f64>, distance: f64, size: u32, fov: f64) -> Vec<Camera> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = i as f64 * golden;
            let dir = Vector3::new(r * a.cos(), r * a.sin(), z);
            let up = if z.abs() > 0.9 { Vector3::new(1.0, 0.0, 0.0) } else { Vector3::new(0.0, 0.0, 1.0) };
            Camera::look_at(size, size, fov, center + dir * distance, *center, up).unwrap()
        })
        .collect()
}
