use rayon::prelude::*;

use super::composite::{voxel_views, PixelValue, RayAccum, VoxelView};
use super::downsample::Resampler;
use super::project::{entries_from_rects, sort_entries, tile_offsets, tile_sign_patterns, voxel_rects, SortEntry, TileGrid};
use super::{RenderOptions, RenderOutput};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::octree::ray_sign_bits;
use crate::real::Real;
use crate::scene::{SparseScene, MAX_VOXELS};

pub use super::composite::PixelRecord;

/// Forward contribution records of one tile.
#[derive(Clone, Debug)]
pub(crate) struct TileRecords<R: Real> {
    /// Per pixel of the tile (row-major within the tile), start into `records`.
    pub offsets: Vec<usize>,
    pub records: Vec<PixelRecord<R>>,
    /// Entry slot within the tile of each record.
    pub slots: Vec<u32>,
    /// Voxel of each entry slot.
    pub slot_voxels: Vec<u32>,
    pub final_t: Vec<R>,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Clone, Debug)]
pub struct ForwardState<R: Real> {
    pub options: RenderOptions,
    /// Camera at internal (supersampled) resolution.
    pub camera: Camera,
    pub output_size: (u32, u32),
    pub grid: TileGrid,
    pub resampler: Resampler,
    pub(crate) views: Vec<VoxelView<R>>,
    pub(crate) tiles: Vec<TileRecords<R>>,
    pub(crate) voxel_count: usize,
    pub(crate) pool_count: usize,
}

impl<R: Real> ForwardState<R> {
    /// Composited voxels of an internal-resolution pixel, front to back.
    pub fn records_at(&self, x: u32, y: u32) -> &[PixelRecord<R>] {
        let (tile, local) = self.locate(x, y);
        let t = &self.tiles[tile];
        &t.records[t.offsets[local]..t.offsets[local + 1]]
    }

    pub fn record_count(&self) -> usize {
        self.tiles.iter().map(|t| t.records.len()).sum()
    }

    pub(crate) fn locate(&self, x: u32, y: u32) -> (usize, usize) {
        let ts = super::TILE_SIZE;
        let tile = ((y / ts) * self.grid.tiles_x + x / ts) as usize;
        let (x0, x1, y0, _) = self.grid.tile_pixels(tile);
        (tile, ((y - y0) * (x1 - x0 + 1) + (x - x0)) as usize)
    }
}

struct TileResult<R: Real> {
    pixels: Vec<PixelValue<R>>,
    records: Option<TileRecords<R>>,
    /// Per entry of the tile run, the largest blend weight seen.
    max_weight: Vec<R>,
}

/// Renders a view. Per-voxel max blend weights are filled in when
/// `collect_stats` is set.
pub fn render<R: Real>(
    scene: &SparseScene<R>,
    cam: &Camera,
    opts: &RenderOptions,
    collect_stats: bool,
) -> Result<RenderOutput> {
    forward(scene, cam, opts, false, collect_stats).map(|(out, _)| out)
}

/// Renders a view and keeps the contribution records for
/// [`super::render_backward`]. Statistics are always collected.
pub fn render_train<R: Real>(
    scene: &SparseScene<R>,
    cam: &Camera,
    opts: &RenderOptions,
) -> Result<(RenderOutput, ForwardState<R>)> {
    forward(scene, cam, opts, true, true).map(|(out, state)| (out, state.expect("records requested")))
}

fn forward<R: Real>(
    scene: &SparseScene<R>,
    cam: &Camera,
    opts: &RenderOptions,
    keep_records: bool,
    collect_stats: bool,
) -> Result<(RenderOutput, Option<ForwardState<R>>)> {
    opts.validate()?;
    cam.validate()?;
    let (iw, ih) = opts.internal_size(cam.width, cam.height);
    let icam = cam.scaled(iw, ih);
    let grid = TileGrid::new(iw, ih)?;
    let masks: Vec<u8> = (0..grid.tile_count()).map(|t| tile_sign_patterns(&icam, &grid, t)).collect();
    if scene.len() >= MAX_VOXELS {
        return Err(Error::Capacity(format!("{} voxels exceed the limit of {MAX_VOXELS}", scene.len())));
    }
    let rects = voxel_rects(scene, &icam);
    let mut entries = entries_from_rects(scene, &rects, &grid, &masks);
    sort_entries(&mut entries);
    let offsets = tile_offsets(&entries, grid.tile_count());
    let views = voxel_views(scene, &icam.position);

    let results: Vec<TileResult<R>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            render_tile(
                &icam,
                &grid,
                tile,
                &entries[offsets[tile]..offsets[tile + 1]],
                &rects,
                &views,
                opts,
                keep_records,
                collect_stats,
            )
        })
        .collect();

    let n = (iw * ih) as usize;
    let mut color = vec![0.0; 3 * n];
    let mut depth = vec![0.0; n];
    let mut median = vec![0.0; n];
    let mut normal = vec![0.0; 3 * n];
    let mut trans = vec![0.0; n];
    for (tile, res) in results.iter().enumerate() {
        let (x0, x1, y0, y1) = grid.tile_pixels(tile);
        let mut i = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = (y * iw + x) as usize;
                let px = &res.pixels[i];
                for c in 0..3 {
                    color[3 * p + c] = px.color[c].to_f64();
                    normal[3 * p + c] = px.normal[c].to_f64();
                }
                depth[p] = px.depth.to_f64();
                median[p] = px.median.to_f64();
                trans[p] = px.t.to_f64();
                i += 1;
            }
        }
    }
    let max_weight = collect_stats.then(|| {
        let mut mw = vec![0.0f64; scene.len()];
        for (tile, res) in results.iter().enumerate() {
            for (e, w) in entries[offsets[tile]..offsets[tile + 1]].iter().zip(&res.max_weight) {
                let slot = &mut mw[e.voxel()];
                *slot = slot.max(w.to_f64());
            }
        }
        mw
    });

    let resampler = Resampler::new(iw, ih, cam.width, cam.height);
    let out = RenderOutput {
        width: cam.width,
        height: cam.height,
        color: resampler.down(&color, 3),
        depth: resampler.down(&depth, 1),
        median_depth: resampler.down(&median, 1),
        normal: resampler.down(&normal, 3),
        transmittance: resampler.down(&trans, 1),
        max_weight,
    };
    let state = keep_records.then(|| ForwardState {
        options: *opts,
        camera: icam,
        output_size: (cam.width, cam.height),
        grid,
        resampler,
        views,
        tiles: results.into_iter().map(|r| r.records.expect("records kept")).collect(),
        voxel_count: scene.len(),
        pool_count: scene.pool_len(),
    });
    Ok((out, state))
}

/// Composites one tile voxel-major: entries are visited in sorted order and
/// each one only touches the pixels of its rectangle with a matching sign
/// pattern. Every pixel still sees its voxels in sorted order.
#[allow(clippy::too_many_arguments)]
fn render_tile<R: Real>(
    cam: &Camera,
    grid: &TileGrid,
    tile: usize,
    run: &[SortEntry],
    rects: &[Option<[u32; 4]>],
    views: &[VoxelView<R>],
    opts: &RenderOptions,
    keep_records: bool,
    collect_stats: bool,
) -> TileResult<R> {
    let (x0, x1, y0, y1) = grid.tile_pixels(tile);
    let tw = (x1 - x0 + 1) as usize;
    let count = tw * (y1 - y0 + 1) as usize;
    let mut rays = Vec::with_capacity(count);
    let mut signs = Vec::with_capacity(count);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let ray = cam.pixel_ray(x as f64, y as f64);
            signs.push(ray_sign_bits(&ray.dir).bits());
            rays.push(ray.cast::<R>());
        }
    }
    let mut acc = vec![RayAccum::<R>::new(); count];
    let mut per_pixel: Vec<Vec<(PixelRecord<R>, u32)>> = if keep_records { vec![Vec::new(); count] } else { Vec::new() };
    let mut max_weight = vec![R::zero(); if collect_stats { run.len() } else { 0 }];
    for (slot, e) in run.iter().enumerate() {
        let v = e.voxel();
        let sign = e.sign_bits();
        let [rx0, rx1, ry0, ry1] = rects[v].expect("entries come from projected voxels");
        for y in ry0.max(y0)..=ry1.min(y1) {
            for x in rx0.max(x0)..=rx1.min(x1) {
                let p = (y - y0) as usize * tw + (x - x0) as usize;
                if signs[p] != sign || acc[p].done {
                    continue;
                }
                if let Some((rec, _)) = acc[p].add(views, v, &rays[p], opts) {
                    if collect_stats {
                        let w = rec.t_before * rec.alpha;
                        if w > max_weight[slot] {
                            max_weight[slot] = w;
                        }
                    }
                    if keep_records {
                        per_pixel[p].push((rec, slot as u32));
                    }
                }
            }
        }
    }
    let pixels: Vec<PixelValue<R>> = acc.into_iter().map(|a| a.finish(opts)).collect();
    let records = keep_records.then(|| {
        let mut offsets = Vec::with_capacity(count + 1);
        let total = per_pixel.iter().map(Vec::len).sum();
        let mut records = Vec::with_capacity(total);
        let mut slots = Vec::with_capacity(total);
        for list in &per_pixel {
            offsets.push(records.len());
            for (r, s) in list {
                records.push(*r);
                slots.push(*s);
            }
        }
        offsets.push(records.len());
        TileRecords {
            offsets,
            records,
            slots,
            slot_voxels: run.iter().map(|e| e.voxel() as u32).collect(),
            final_t: pixels.iter().map(|px| px.t).collect(),
        }
    });
    TileResult {
        pixels,
        records,
        max_weight,
    }
}
