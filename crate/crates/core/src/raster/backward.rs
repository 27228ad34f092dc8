//! Adjoint of the compositing pass.
//!
//! For one ray, write the composited value as
//! `V = sum_i T_i * h_i + T_end * E` with `h_i = alpha_i * f_i + g_D * d_i`,
//! where `f_i` collects everything weighted by the blend weight (color,
//! normal, regularizer features), `d_i` is the voxel depth and `E` the
//! background/transmittance term. Walking the records back to front with
//! `S <- h_i + (1 - alpha_i) * S`, starting from `S = E`, gives
//! `dV/dalpha_i = T_i * (f_i - S)` without any division by `1 - alpha`.

use rayon::prelude::*;

use super::composite::{PixelRecord, VoxelView};
use super::render::{ForwardState, TileRecords};
use super::RenderOptions;
use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::field::{
    sample_alpha_backward, sh_backward, sh_basis, sh_eval, voxel_alpha, voxel_alpha_backward, voxel_depth,
    voxel_depth_backward, voxel_normal, voxel_normal_backward, CornerDensities, RaySegment,
};
use crate::real::Real;
use crate::scene::SparseScene;

/// Upstream gradients at output resolution. Missing channels count as zero.
#[derive(Clone, Debug, Default)]
pub struct ImageGradients {
    pub color: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub normal: Option<Vec<f64>>,
    pub transmittance: Option<Vec<f64>>,
}

impl ImageGradients {
    pub fn zeros(width: u32, height: u32) -> Self {
        ImageGradients {
            color: vec![0.0; 3 * (width * height) as usize],
            ..Default::default()
        }
    }
}

/// Per-ray regularizers evaluated on the internal-resolution rays, each
/// averaged over rays and scaled by its weight.
#[derive(Clone, Copy, Debug, Default)]
pub struct RayLossWeights<'a> {
    /// Binary entropy of the final transmittance.
    pub transmittance: f64,
    /// Distortion over blend weights and segment midpoints.
    pub distortion: f64,
    /// Blend-weighted squared error between voxel colors and the target.
    pub voxel_rgb: f64,
    /// Target image at output resolution (3 values per pixel); required when
    /// `voxel_rgb > 0`.
    pub target: Option<&'a [f64]>,
}

/// Unweighted regularizer values (means over rays).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayLossValues {
    pub transmittance: f64,
    pub distortion: f64,
    pub voxel_rgb: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients<R: Real> {
    /// Aligned with the density pool.
    pub density: Vec<R>,
    /// Aligned with the SH coefficients.
    pub sh: Vec<R>,
}

impl<R: Real> SceneGradients<R> {
    pub fn zeros_like(scene: &SparseScene<R>) -> Self {
        SceneGradients {
            density: vec![R::zero(); scene.pool_len()],
            sh: vec![R::zero(); scene.sh.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += *b;
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += *b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackwardOutput<R: Real> {
    pub grads: SceneGradients<R>,
    /// Per voxel, the sum over rays of `|alpha * dL/dalpha|`.
    pub priority: Vec<f64>,
    pub losses: RayLossValues,
}

const ENTROPY_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
struct VoxelAccum {
    density: [f64; 8],
    color: [f64; 3],
    normal: [f64; 3],
    priority: f64,
}

/// Accumulators per entry slot of a tile.
struct TileAccum {
    acc: Vec<VoxelAccum>,
    losses: RayLossValues,
}

/// Gradients of a scalar loss with respect to every density and SH
/// coefficient, given its gradients on the rendered images plus the per-ray
/// regularizers in `ray_losses`.
pub fn render_backward<R: Real>(
    scene: &SparseScene<R>,
    state: &ForwardState<R>,
    opts: &RenderOptions,
    upstream: &ImageGradients,
    ray_losses: &RayLossWeights,
) -> Result<BackwardOutput<R>> {
    if *opts != state.options {
        return Err(Error::InvalidState("backward options differ from the forward pass".into()));
    }
    if state.voxel_count != scene.len() || state.pool_count != scene.pool_len() {
        return Err(Error::InvalidState("scene changed between forward and backward passes".into()));
    }
    let (ow, oh) = state.output_size;
    let out_pixels = (ow * oh) as usize;
    let check = |v: &[f64], ch: usize, name: &str| {
        if v.len() != out_pixels * ch {
            Err(Error::invalid(format!("{name} gradient has {} values, expected {}", v.len(), out_pixels * ch)))
        } else {
            Ok(())
        }
    };
    check(&upstream.color, 3, "color")?;
    let r = &state.resampler;
    let g_color = r.down_adjoint(&upstream.color, 3);
    let g_depth = match &upstream.depth {
        Some(d) => {
            check(d, 1, "depth")?;
            if d.iter().any(|x| *x != 0.0) && opts.samples > 3 {
                return Err(Error::invalid("depth gradients support at most 3 samples per voxel"));
            }
            Some(r.down_adjoint(d, 1))
        }
        None => None,
    };
    let g_normal = match &upstream.normal {
        Some(n) => {
            check(n, 3, "normal")?;
            Some(r.down_adjoint(n, 3))
        }
        None => None,
    };
    let g_trans = match &upstream.transmittance {
        Some(t) => {
            check(t, 1, "transmittance")?;
            Some(r.down_adjoint(t, 1))
        }
        None => None,
    };
    if ray_losses.voxel_rgb > 0.0 {
        match ray_losses.target {
            Some(t) => check(t, 3, "target")?,
            None => return Err(Error::invalid("voxel color loss needs a target image")),
        }
    }

    let iw = state.camera.width;
    let rays = (iw * state.camera.height) as f64;
    let ctx = PixelContext {
        state,
        opts,
        g_color: &g_color,
        g_depth: g_depth.as_deref(),
        g_normal: g_normal.as_deref(),
        g_trans: g_trans.as_deref(),
        weights: ray_losses,
        inv_rays: 1.0 / rays,
    };
    let tiles: Vec<TileAccum> = (0..state.tiles.len())
        .into_par_iter()
        .map(|tile| backward_tile(&ctx, tile, &state.tiles[tile]))
        .collect::<Result<_>>()?;

    let mut per_voxel = vec![VoxelAccum::default(); scene.len()];
    let mut losses = RayLossValues::default();
    for (t, rec) in tiles.iter().zip(&state.tiles) {
        for (v, a) in rec.slot_voxels.iter().zip(&t.acc) {
            let dst = &mut per_voxel[*v as usize];
            for c in 0..8 {
                dst.density[c] += a.density[c];
            }
            for c in 0..3 {
                dst.color[c] += a.color[c];
                dst.normal[c] += a.normal[c];
            }
            dst.priority += a.priority;
        }
        losses.transmittance += t.losses.transmittance;
        losses.distortion += t.losses.distortion;
        losses.voxel_rgb += t.losses.voxel_rgb;
    }

    let stride = scene.sh_stride();
    let origin = state.camera.position;
    let mut grads = SceneGradients::zeros_like(scene);
    let voxel_dens: Vec<CornerDensities<R>> = per_voxel
        .par_iter()
        .zip(grads.sh.par_chunks_mut(stride.max(1)))
        .enumerate()
        .map(|(v, (a, sh))| {
            let mut dens = a.density.map(R::of);
            if a.color.iter().any(|c| *c != 0.0) {
                let (c, _) = scene.geometry(v);
                let dir = (c - origin).try_normalize(0.0).unwrap_or_else(|| nalgebra::Vector3::new(0.0, 0.0, 1.0));
                let basis = sh_basis(scene.sh_degree, &dir.map(R::of));
                let color = sh_eval(scene.sh_coeffs(v), &basis, scene.sh_degree);
                sh_backward(&color, &basis, scene.sh_degree, &a.color.map(R::of), sh);
            }
            if a.normal.iter().any(|c| *c != 0.0) {
                let n = voxel_normal(&scene.corner_densities(v));
                let dn = nalgebra::Vector3::from(a.normal.map(R::of));
                let g = voxel_normal_backward(&n, &dn);
                for c in 0..8 {
                    dens[c] += g[c];
                }
            }
            dens
        })
        .collect();
    for (v, dens) in voxel_dens.iter().enumerate() {
        for c in 0..8 {
            grads.density[scene.corner_index[v][c] as usize] += dens[c];
        }
    }
    Ok(BackwardOutput {
        grads,
        priority: per_voxel.iter().map(|a| a.priority).collect(),
        losses: RayLossValues {
            transmittance: losses.transmittance / rays,
            distortion: losses.distortion / rays,
            voxel_rgb: losses.voxel_rgb / rays,
        },
    })
}

struct PixelContext<'a, R: Real> {
    state: &'a ForwardState<R>,
    opts: &'a RenderOptions,
    g_color: &'a [f64],
    g_depth: Option<&'a [f64]>,
    g_normal: Option<&'a [f64]>,
    g_trans: Option<&'a [f64]>,
    weights: &'a RayLossWeights<'a>,
    inv_rays: f64,
}

fn backward_tile<R: Real>(ctx: &PixelContext<R>, tile: usize, rec: &TileRecords<R>) -> Result<TileAccum> {
    let state = ctx.state;
    let (x0, x1, y0, y1) = state.grid.tile_pixels(tile);
    let iw = state.camera.width;
    let mut acc = TileAccum {
        acc: vec![VoxelAccum::default(); rec.slot_voxels.len()],
        losses: RayLossValues::default(),
    };
    let mut dist_grad: Vec<f64> = Vec::new();
    let mut local = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (y * iw + x) as usize;
            let range = rec.offsets[local]..rec.offsets[local + 1];
            let records = &rec.records[range.clone()];
            let slots = &rec.slots[range];
            let t_end = rec.final_t[local].to_f64();
            local += 1;
            let ray = state.camera.pixel_ray(x as f64, y as f64).cast::<R>();
            let target = match ctx.weights.target {
                Some(t) if ctx.weights.voxel_rgb > 0.0 => {
                    let (ox, oy) = state.resampler.containing(x as usize, y as usize);
                    let o = 3 * (oy * state.output_size.0 as usize + ox);
                    Some([t[o], t[o + 1], t[o + 2]])
                }
                _ => None,
            };
            backward_pixel(ctx, p, &ray, records, slots, t_end, target, &mut dist_grad, &mut acc)?;
        }
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel<R: Real>(
    ctx: &PixelContext<R>,
    p: usize,
    ray: &Ray<R>,
    records: &[PixelRecord<R>],
    slots: &[u32],
    t_end: f64,
    target: Option<[f64; 3]>,
    dist_grad: &mut Vec<f64>,
    acc: &mut TileAccum,
) -> Result<()> {
    let views: &[VoxelView<R>] = &ctx.state.views;
    let w = ctx.weights;
    let g_c = [ctx.g_color[3 * p], ctx.g_color[3 * p + 1], ctx.g_color[3 * p + 2]];
    let g_d = ctx.g_depth.map_or(0.0, |g| g[p]);
    let g_n = ctx.g_normal.map_or([0.0; 3], |g| [g[3 * p], g[3 * p + 1], g[3 * p + 2]]);
    let mut g_t = ctx.g_trans.map_or(0.0, |g| g[p]);

    if w.transmittance > 0.0 {
        let t = t_end.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
        acc.losses.transmittance += -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        if t_end > ENTROPY_CLAMP && t_end < 1.0 - ENTROPY_CLAMP {
            g_t += w.transmittance * ctx.inv_rays * ((1.0 - t) / t).ln();
        }
    }

    // distortion: records are disjoint segments in ray order, so midpoints are sorted
    dist_grad.clear();
    if w.distortion > 0.0 && !records.is_empty() {
        let (mut w_total, mut s_total) = (0.0, 0.0);
        for r in records {
            let wi = (r.t_before * r.alpha).to_f64();
            w_total += wi;
            s_total += wi * 0.5 * (r.a + r.b).to_f64();
        }
        let (mut w_before, mut s_before) = (0.0, 0.0);
        let mut value = 0.0;
        let scale = w.distortion * ctx.inv_rays;
        for r in records {
            let wi = (r.t_before * r.alpha).to_f64();
            let ti = 0.5 * (r.a + r.b).to_f64();
            let dt = (r.b - r.a).to_f64();
            let w_after = w_total - w_before - wi;
            let s_after = s_total - s_before - wi * ti;
            let spread = ti * w_before - s_before + s_after - ti * w_after;
            value += wi * spread + wi * wi * dt / 3.0;
            dist_grad.push(scale * (2.0 * spread + 2.0 / 3.0 * wi * dt));
            w_before += wi;
            s_before += wi * ti;
        }
        acc.losses.distortion += value;
    }

    let bg = ctx.opts.background;
    let mut rest = g_c[0] * bg[0] + g_c[1] * bg[1] + g_c[2] * bg[2] + g_t;
    let rgb_scale = w.voxel_rgb * ctx.inv_rays;
    for (i, r) in records.iter().enumerate().rev() {
        let view = &views[r.voxel as usize];
        let t_i = r.t_before.to_f64();
        let alpha = r.alpha.to_f64();
        let wi = t_i * alpha;
        let rgb = view.rgb.map(|c| c.to_f64());
        let mut feat = g_c[0] * rgb[0] + g_c[1] * rgb[1] + g_c[2] * rgb[2];
        feat += g_n[0] * view.normal.x.to_f64() + g_n[1] * view.normal.y.to_f64() + g_n[2] * view.normal.z.to_f64();
        if let Some(g) = dist_grad.get(i) {
            feat += g;
        }
        let mut dc = [wi * g_c[0], wi * g_c[1], wi * g_c[2]];
        if let Some(gt) = target {
            let diff = [rgb[0] - gt[0], rgb[1] - gt[1], rgb[2] - gt[2]];
            let sq = diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2];
            acc.losses.voxel_rgb += wi * sq;
            feat += rgb_scale * sq;
            for c in 0..3 {
                dc[c] += rgb_scale * wi * 2.0 * diff[c];
            }
        }

        let need_cache = alpha > 0.0 || g_d != 0.0;
        let d_alpha = t_i * (feat - rest);
        let mut depth_i = 0.0;
        let corner_grad = if need_cache {
            let seg = RaySegment {
                a: r.a,
                b: r.b,
                valid: true,
            };
            let cache = voxel_alpha(&view.density, &view.center, view.size, &seg, ray, ctx.opts.samples);
            let k = cache.samples;
            if g_d != 0.0 {
                let sa = &cache.sample_alpha[..k];
                let ts = &cache.t[..k];
                depth_i = voxel_depth(sa, ts).to_f64();
                let dd = voxel_depth_backward(sa, ts)?;
                let mut per_sample = [R::zero(); crate::field::MAX_SAMPLES];
                for m in 0..k {
                    let others: f64 = (0..k).filter(|&j| j != m).map(|j| 1.0 - sa[j].to_f64()).product();
                    per_sample[m] = R::of(t_i * ((feat - rest) * others + g_d * dd[m].to_f64()));
                }
                sample_alpha_backward(&cache, &per_sample[..k])
            } else {
                voxel_alpha_backward(&cache, R::of(d_alpha))
            }
        } else {
            [R::zero(); 8]
        };

        let slot = &mut acc.acc[slots[i] as usize];
        for c in 0..8 {
            slot.density[c] += corner_grad[c].to_f64();
        }
        for c in 0..3 {
            slot.color[c] += dc[c];
            slot.normal[c] += wi * g_n[c];
        }
        slot.priority += (alpha * d_alpha).abs();
        rest = alpha * feat + g_d * depth_i + (1.0 - alpha) * rest;
    }
    Ok(())
}
