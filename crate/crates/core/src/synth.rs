//! Synthetic datasets: an analytic shape baked into a dense sparse-voxel
//! scene, rendered by the reference renderer from cameras around it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::dataset::{Dataset, Frame};
use crate::error::{Error, Result};
use crate::field::{explin_inverse, sh_dc_for};
use crate::image::{quantize, write_depth, write_png};
use crate::octree::{to_octpath, OctPath, SceneBounds, VoxelIndex};
use crate::optim::TrainView;
use crate::raster::{render_oracle, RenderOptions};
use crate::scene::SparseScene;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Boxes,
    SphereCube,
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "cube" => Ok(Shape::Cube),
            "boxes" => Ok(Shape::Boxes),
            "spherecube" => Ok(Shape::SphereCube),
            _ => Err(Error::invalid(format!("unknown shape {s:?} (sphere, cube, boxes, spherecube)"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Boxes => "boxes",
            Shape::SphereCube => "spherecube",
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Primitive {
    Sphere { center: Vector3<f64>, radius: f64, color: [f64; 3] },
    Box { center: Vector3<f64>, half: Vector3<f64>, color: [f64; 3] },
}

impl Primitive {
    fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => (p - center).norm() - radius,
            Primitive::Box { center, half, .. } => {
                let q = (p - center).abs() - half;
                q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    fn color(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { color, .. } | Primitive::Box { color, .. } => *color,
        }
    }
}

fn primitives(shape: Shape, seed: u64) -> Vec<Primitive> {
    let v = Vector3::new;
    match shape {
        Shape::Sphere => vec![Primitive::Sphere { center: v(0.0, 0.0, 0.0), radius: 0.6, color: [0.85, 0.35, 0.25] }],
        Shape::Cube => vec![Primitive::Box { center: v(0.0, 0.0, 0.0), half: v(0.45, 0.45, 0.45), color: [0.25, 0.45, 0.85] }],
        Shape::SphereCube => vec![
            Primitive::Sphere { center: v(-0.35, 0.0, 0.05), radius: 0.4, color: [0.85, 0.35, 0.25] },
            Primitive::Box { center: v(0.38, 0.05, -0.1), half: v(0.28, 0.28, 0.28), color: [0.25, 0.45, 0.85] },
        ],
        Shape::Boxes => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..4)
                .map(|_| Primitive::Box {
                    center: v(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)),
                    half: v(rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3)),
                    color: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
                })
                .collect()
        }
    }
}

/// Signed distance of the union and the color of the closest primitive.
fn sample(prims: &[Primitive], p: &Vector3<f64>) -> (f64, [f64; 3]) {
    prims
        .iter()
        .map(|q| (q.sdf(p), q.color()))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one primitive")
}

pub const SYNTH_LEVEL: u8 = 6;

/// World units per shape unit. Shapes live in [-1, 1]^3; the scene is large
/// so that a lv-6 voxel is 32 units wide.
pub const SYNTH_SCALE: f64 = 1024.0;

/// Optical depth of one voxel fully inside a shape.
const INSIDE_OPTICAL_DEPTH: f64 = 20.0;

/// Raw density of empty space.
const EMPTY_RAW: f64 = -30.0;

/// Bounds of every synthetic scene.
pub fn synth_bounds() -> SceneBounds {
    SceneBounds::new([0.0; 3], 2.0 * SYNTH_SCALE).expect("valid bounds")
}

/// Raw density whose activation ramps linearly in optical depth per voxel
/// from 0 half a voxel outside the surface to the inside value half a voxel
/// inside. `sdf` and `h` are in shape units.
fn raw_density(sdf: f64, h: f64) -> f64 {
    let s = (0.5 - sdf / h).clamp(0.0, 1.0);
    let sigma = s * INSIDE_OPTICAL_DEPTH / (h * SYNTH_SCALE);
    if sigma > 0.0 {
        explin_inverse(sigma).max(EMPTY_RAW)
    } else {
        EMPTY_RAW
    }
}

/// The analytic shape as a lv-6 scene with degree-0 colors, keeping only the
/// voxels near the surface (the interior is hidden behind an opaque shell).
pub fn synth_scene(shape: Shape, seed: u64) -> Result<SparseScene<f64>> {
    let prims = primitives(shape, seed);
    let bounds = synth_bounds();
    let n = 1u32 << SYNTH_LEVEL;
    let h = 2.0 / n as f64;
    let unit = |p: Vector3<f64>| p / SYNTH_SCALE;
    let mut voxels: Vec<OctPath> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = VoxelIndex::new(i, j, k, SYNTH_LEVEL)?;
                let d: Vec<f64> = v.corner_keys().iter().map(|key| sample(&prims, &unit(bounds.key_position(*key))).0).collect();
                let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if lo < h && hi > -2.0 * h {
                    voxels.push(to_octpath(v)?);
                }
            }
        }
    }
    voxels.sort_unstable_by_key(|p| p.code());
    let mut scene = SparseScene::from_voxels(bounds, 0, &voxels, 0.0, &[0.0; 3])?;
    let positions = scene.pool_positions();
    for (d, p) in scene.density.iter_mut().zip(positions) {
        *d = raw_density(sample(&prims, &unit(p)).0, h);
    }
    for v in 0..scene.len() {
        let c = unit(scene.geometry(v).0);
        let base = sample(&prims, &c).1;
        // soft stripes give the images some texture
        let t = 0.12 * ((6.0 * c.x).sin() * (6.0 * c.y).cos() + (5.0 * c.z).sin());
        let coeffs = scene.sh_coeffs_mut(v);
        for ch in 0..3 {
            coeffs[ch] = sh_dc_for((base[ch] + t).clamp(0.02, 0.98));
        }
    }
    Ok(scene)
}

/// Cameras on a spiral around the origin at distance 3 shape units, elevations from
/// -20 to 60 degrees, all looking at the origin with z up.
pub fn synth_cameras(views: usize, width: u32, height: u32) -> Result<Vec<Camera>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..views)
        .map(|i| {
            let u = if views > 1 { i as f64 / (views - 1) as f64 } else { 0.5 };
            let elev = (-20.0 + 80.0 * u).to_radians();
            let az = i as f64 * golden;
            let eye = Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()) * (3.0 * SYNTH_SCALE);
            Camera::look_at(width, height, 45.0, eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0))
        })
        .collect()
}

/// Options of the ground-truth renders.
pub fn synth_render_options() -> RenderOptions {
    RenderOptions {
        samples: 8,
        t_threshold: 1e-4,
        supersample: 2.0,
        background: [0.0; 3],
    }
}

pub struct SynthData {
    pub scene: SparseScene<f64>,
    pub views: Vec<TrainView>,
    /// Median depth per view; misses hold the far depth.
    pub depth: Vec<Vec<f64>>,
}

/// Renders the ground truth in memory. Images are quantized to 8 bits so
/// they equal what a PNG roundtrip returns.
pub fn generate(shape: Shape, views: usize, resolution: u32, seed: u64) -> Result<SynthData> {
    if views == 0 || resolution == 0 {
        return Err(Error::invalid("need at least one view and a positive resolution"));
    }
    let scene = synth_scene(shape, seed)?;
    let opts = synth_render_options();
    let mut out = SynthData {
        scene,
        views: Vec::new(),
        depth: Vec::new(),
    };
    for (i, cam) in synth_cameras(views, resolution, resolution)?.into_iter().enumerate() {
        let r = render_oracle(&out.scene, &cam, &opts)?;
        out.views.push(TrainView {
            name: format!("frame_{i:03}.png"),
            camera: cam,
            image: quantize(&r.color),
        });
        out.depth.push(r.median_depth);
    }
    Ok(out)
}

/// Writes images, depth maps and `cameras.json` (with the scene bounds).
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<Dataset> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for (v, depth) in data.views.iter().zip(&data.depth) {
        let (w, h) = (v.camera.width, v.camera.height);
        write_png(&dir.join(&v.name), w, h, &v.image)?;
        write_depth(&dir.join(v.name.replace(".png", ".depth")), w, h, depth)?;
        frames.push(Frame {
            image: v.name.clone(),
            camera: v.camera.clone(),
        });
    }
    let ds = Dataset {
        root: dir.to_path_buf(),
        frames,
        bounds: Some(data.scene.bounds),
    };
    ds.save(dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_names() {
        for s in [Shape::Sphere, Shape::Cube, Shape::Boxes, Shape::SphereCube] {
            assert_eq!(s.to_string().parse::<Shape>().unwrap(), s);
        }
        assert!("torus".parse::<Shape>().is_err());
    }

    #[test]
    fn box_sdf() {
        let b = Primitive::Box { center: Vector3::zeros(), half: Vector3::new(1.0, 1.0, 1.0), color: [0.0; 3] };
        assert_eq!(b.sdf(&Vector3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(b.sdf(&Vector3::new(0.5, 0.0, 0.0)), -0.5);
        assert!((b.sdf(&Vector3::new(2.0, 2.0, 0.0)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sphere_silhouette_and_depth() {
        let d = generate(Shape::Sphere, 3, 32, 0).unwrap();
        d.scene.validate().unwrap();
        for (v, depth) in d.views.iter().zip(&d.depth) {
            let (w, h) = (32usize, 32usize);
            let c = (h / 2) * w + w / 2;
            let dist = v.camera.position.norm() / SYNTH_SCALE;
            let want = dist - 0.6;
            let got = depth[c] / SYNTH_SCALE;
            assert!((got - want).abs() < 2.0 / 64.0, "{got} vs {want}");
            // silhouette is a disc around the image center
            let r_px = (0.6 / (dist * dist - 0.36).sqrt()) * v.camera.fx;
            for y in 0..h {
                for x in 0..w {
                    let dist = ((x as f64 + 0.5 - 16.0).powi(2) + (y as f64 + 0.5 - 16.0).powi(2)).sqrt();
                    let lum: f64 = v.image[3 * (y * w + x)..3 * (y * w + x) + 3].iter().sum();
                    if dist < r_px - 1.5 {
                        assert!(lum > 0.3, "inside pixel {x},{y} dark");
                    } else if dist > r_px + 1.5 {
                        assert_eq!(lum, 0.0, "outside pixel {x},{y} lit");
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(Shape::Boxes, 2, 16, 7).unwrap();
        let b = generate(Shape::Boxes, 2, 16, 7).unwrap();
        assert_eq!(a.views, b.views);
        let c = generate(Shape::Boxes, 2, 16, 8).unwrap();
        assert_ne!(a.views, c.views);
    }
}
