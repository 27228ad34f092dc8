use nalgebra::Vector3;
use rayon::prelude::*;

use super::{RenderOptions, FAR_DEPTH};
use crate::camera::Ray;
use crate::field::{ray_aabb, sh_basis, sh_eval, voxel_alpha, voxel_depth, voxel_normal, AlphaCache, CornerDensities};
use crate::real::Real;
use crate::scene::SparseScene;

/// Per-view voxel data shared by every ray of the view.
#[derive(Clone, Copy, Debug)]
pub struct VoxelView<R: Real> {
    pub center: Vector3<R>,
    pub size: R,
    pub density: CornerDensities<R>,
    pub rgb: [R; 3],
    pub normal: Vector3<R>,
}

/// Colors use the direction from the camera to the voxel center.
pub fn voxel_views<R: Real>(scene: &SparseScene<R>, origin: &Vector3<f64>) -> Vec<VoxelView<R>> {
    (0..scene.len())
        .into_par_iter()
        .map(|v| {
            let (c, s) = scene.geometry(v);
            let dir = (c - origin).try_normalize(0.0).unwrap_or_else(|| Vector3::new(0.0, 0.0, 1.0));
            let basis = sh_basis(scene.sh_degree, &dir.map(R::of));
            let density = scene.corner_densities(v);
            VoxelView {
                center: c.map(R::of),
                size: R::of(s),
                density,
                rgb: sh_eval(scene.sh_coeffs(v), &basis, scene.sh_degree).rgb,
                normal: voxel_normal(&density).normal,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelValue<R: Real> {
    pub color: [R; 3],
    pub depth: R,
    pub median: R,
    pub normal: [R; 3],
    pub t: R,
}

/// One composited voxel of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelRecord<R: Real> {
    pub voxel: u32,
    /// Transmittance before this voxel.
    pub t_before: R,
    pub alpha: R,
    pub a: R,
    pub b: R,
}

/// Running front-to-back compositing state of one ray.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RayAccum<R: Real> {
    px: PixelValue<R>,
    median_set: bool,
    /// Transmittance fell below the threshold; later voxels are ignored.
    pub done: bool,
}

impl<R: Real> RayAccum<R> {
    pub fn new() -> Self {
        RayAccum {
            px: PixelValue {
                color: [R::zero(); 3],
                depth: R::zero(),
                median: R::of(FAR_DEPTH),
                normal: [R::zero(); 3],
                t: R::one(),
            },
            median_set: false,
            done: false,
        }
    }

    /// Composites voxel `v` if the ray hits it.
    #[inline]
    pub fn add(
        &mut self,
        views: &[VoxelView<R>],
        v: usize,
        ray: &Ray<R>,
        opts: &RenderOptions,
    ) -> Option<(PixelRecord<R>, AlphaCache<R>)> {
        let view = &views[v];
        let seg = ray_aabb(&view.center, view.size, ray);
        if !seg.valid {
            return None;
        }
        let one = R::one();
        let px = &mut self.px;
        let cache = voxel_alpha(&view.density, &view.center, view.size, &seg, ray, opts.samples);
        let alpha = cache.alpha;
        let w = px.t * alpha;
        for ch in 0..3 {
            px.color[ch] += w * view.rgb[ch];
            px.normal[ch] += w * view.normal[ch];
        }
        let k = cache.samples;
        px.depth += px.t * voxel_depth(&cache.sample_alpha[..k], &cache.t[..k]);
        if !self.median_set {
            let mut ts = px.t;
            for s in 0..k {
                ts *= one - cache.sample_alpha[s];
                if ts < R::of(0.5) {
                    px.median = cache.t[s];
                    self.median_set = true;
                    break;
                }
            }
        }
        let rec = PixelRecord {
            voxel: v as u32,
            t_before: px.t,
            alpha,
            a: seg.a,
            b: seg.b,
        };
        px.t *= one - alpha;
        if px.t < R::of(opts.t_threshold) {
            self.done = true;
        }
        Some((rec, cache))
    }

    /// Adds the background behind the remaining transmittance.
    pub fn finish(self, opts: &RenderOptions) -> PixelValue<R> {
        let mut px = self.px;
        for ch in 0..3 {
            px.color[ch] += px.t * R::of(opts.background[ch]);
        }
        px
    }
}

/// Front-to-back compositing of `order` (pairs of caller tag and voxel id)
/// along `ray`. Misses are skipped; `on_hit` sees the tag, record and alpha
/// cache of every composited voxel.
pub(crate) fn composite_ray<R: Real>(
    views: &[VoxelView<R>],
    ray: &Ray<R>,
    order: impl Iterator<Item = (usize, usize)>,
    opts: &RenderOptions,
    mut on_hit: impl FnMut(usize, &PixelRecord<R>, &AlphaCache<R>),
) -> PixelValue<R> {
    let mut acc = RayAccum::new();
    for (tag, v) in order {
        if let Some((rec, cache)) = acc.add(views, v, ray, opts) {
            on_hit(tag, &rec, &cache);
            if acc.done {
                break;
            }
        }
    }
    acc.finish(opts)
}
