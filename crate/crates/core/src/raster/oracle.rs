//! Reference renderer: per-ray traversal in entry-distance order, with no
//! tiles, sort keys or sign-bit duplication.

use super::composite::{composite_ray, voxel_views, PixelValue, VoxelView};
use super::downsample::Resampler;
use super::project::pixel_rect;
use super::{RenderOptions, RenderOutput};
use crate::camera::{Camera, Ray};
use crate::error::Result;
use crate::field::ray_aabb;
use crate::real::Real;
use crate::scene::SparseScene;

/// Candidates per pixel come from bucketing each voxel's projected bounding
/// rectangle.
pub fn render_oracle<R: Real>(scene: &SparseScene<R>, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    oracle(scene, cam, opts, true)
}

/// Every voxel is tested against every ray. Only for small scenes.
pub fn render_oracle_bruteforce<R: Real>(
    scene: &SparseScene<R>,
    cam: &Camera,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    oracle(scene, cam, opts, false)
}

fn oracle<R: Real>(scene: &SparseScene<R>, cam: &Camera, opts: &RenderOptions, bucketed: bool) -> Result<RenderOutput> {
    opts.validate()?;
    cam.validate()?;
    let (iw, ih) = opts.internal_size(cam.width, cam.height);
    let icam = cam.scaled(iw, ih);
    let views = voxel_views(scene, &icam.position);
    let n = (iw * ih) as usize;
    let buckets: Option<Vec<Vec<u32>>> = bucketed.then(|| {
        let mut b = vec![Vec::new(); n];
        for v in 0..scene.len() {
            let (c, s) = scene.geometry(v);
            if let Some((_, [x0, x1, y0, y1])) = pixel_rect(&icam, iw, ih, &c, s) {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        b[(y * iw + x) as usize].push(v as u32);
                    }
                }
            }
        }
        b
    });

    let mut out = RenderOutput::blank(iw, ih);
    let mut hits: Vec<(R, usize)> = Vec::new();
    for y in 0..ih {
        for x in 0..iw {
            let p = (y * iw + x) as usize;
            let ray = icam.pixel_ray(x as f64, y as f64).cast::<R>();
            hits.clear();
            match &buckets {
                Some(b) => collect_hits(&views, &ray, b[p].iter().map(|&v| v as usize), &mut hits),
                None => collect_hits(&views, &ray, 0..views.len(), &mut hits),
            }
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite entry distance").then(a.1.cmp(&b.1)));
            let px = composite_ray(&views, &ray, hits.iter().map(|h| (h.1, h.1)), opts, |_, _, _| {});
            store(&mut out, p, &px);
        }
    }
    let r = Resampler::new(iw, ih, cam.width, cam.height);
    Ok(RenderOutput {
        width: cam.width,
        height: cam.height,
        color: r.down(&out.color, 3),
        depth: r.down(&out.depth, 1),
        median_depth: r.down(&out.median_depth, 1),
        normal: r.down(&out.normal, 3),
        transmittance: r.down(&out.transmittance, 1),
        max_weight: None,
    })
}

fn collect_hits<R: Real>(
    views: &[VoxelView<R>],
    ray: &Ray<R>,
    candidates: impl Iterator<Item = usize>,
    hits: &mut Vec<(R, usize)>,
) {
    for v in candidates {
        let seg = ray_aabb(&views[v].center, views[v].size, ray);
        if seg.valid {
            hits.push((seg.a, v));
        }
    }
}

fn store<R: Real>(out: &mut RenderOutput, p: usize, px: &PixelValue<R>) {
    for c in 0..3 {
        out.color[3 * p + c] = px.color[c].to_f64();
        out.normal[3 * p + c] = px.normal[c].to_f64();
    }
    out.depth[p] = px.depth.to_f64();
    out.median_depth[p] = px.median.to_f64();
    out.transmittance[p] = px.t.to_f64();
}
