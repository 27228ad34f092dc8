use std::collections::HashMap;

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::sh_dc_for;
use crate::octree::{to_octpath, voxel_geometry, OctPath, SceneBounds, VoxelIndex, MAX_LEVEL};
use crate::real::Real;
use crate::scene::SparseScene;

use super::adapt::max_sampling_rate;
use super::config::TrainConfig;

/// Whether a world point projects inside any camera image in front of it.
pub fn point_observed(p: &Vector3<f64>, cameras: &[Camera]) -> bool {
    cameras.iter().any(|cam| {
        let (u, v, z) = cam.project(p);
        z > 0.0 && u >= -0.5 && v >= -0.5 && u <= cam.width as f64 - 0.5 && v <= cam.height as f64 - 0.5
    })
}

/// Observation test for voxels: some corner is seen by some camera. Corner
/// results are cached since neighbours share them.
struct Observer<'a> {
    bounds: SceneBounds,
    cameras: &'a [Camera],
    seen: HashMap<[u32; 3], bool>,
}

impl<'a> Observer<'a> {
    fn new(bounds: SceneBounds, cameras: &'a [Camera]) -> Self {
        Observer {
            bounds,
            cameras,
            seen: HashMap::new(),
        }
    }

    fn voxel(&mut self, p: &OctPath) -> bool {
        p.to_index().corner_keys().iter().any(|k| {
            let (b, cams) = (&self.bounds, self.cameras);
            *self.seen.entry(*k).or_insert_with(|| point_observed(&b.key_position(*k), cams))
        })
    }
}

fn gray_sh<R: Real>(degree: usize) -> Vec<R> {
    let stride = (degree + 1) * (degree + 1) * 3;
    let mut sh = vec![R::zero(); stride];
    sh[..3].fill(R::of(sh_dc_for(0.5)));
    sh
}

/// Voxels at `level` with index range `[lo, hi)` on every axis.
fn dense_block(level: u8, lo: u32, hi: u32) -> Result<Vec<OctPath>> {
    let mut out = Vec::with_capacity(((hi - lo) as usize).pow(3));
    for i in lo..hi {
        for j in lo..hi {
            for k in lo..hi {
                out.push(to_octpath(VoxelIndex::new(i, j, k, level)?)?);
            }
        }
    }
    Ok(out)
}

fn build<R: Real>(bounds: SceneBounds, mut voxels: Vec<OctPath>, cfg: &TrainConfig) -> Result<SparseScene<R>> {
    voxels.sort_unstable_by_key(|p| (p.code(), p.level()));
    SparseScene::from_voxels(bounds, cfg.sh_degree, &voxels, R::of(cfg.init_density), &gray_sh(cfg.sh_degree))
}

/// Dense grid of `init_level` levels over `bounds`, minus voxels no camera
/// observes. Densities start at `init_density`, colors at gray.
pub fn init_bounded<R: Real>(bounds: SceneBounds, cameras: &[Camera], cfg: &TrainConfig) -> Result<SparseScene<R>> {
    if cameras.is_empty() {
        return Err(Error::invalid("initialization needs at least one camera"));
    }
    let mut obs = Observer::new(bounds, cameras);
    let mut voxels = dense_block(cfg.init_level, 0, 1 << cfg.init_level)?;
    voxels.retain(|p| obs.voxel(p));
    build(bounds, voxels, cfg)
}

/// Main region and bounds of the unbounded layout: the main cube is centered
/// at the mean camera position with half-size equal to the median camera
/// distance; the scene is `2^background_levels` times wider.
pub fn unbounded_region(cameras: &[Camera], background_levels: u8) -> Result<(Vector3<f64>, f64, SceneBounds)> {
    if cameras.len() < 2 {
        return Err(Error::invalid("unbounded initialization needs at least two cameras"));
    }
    let center = cameras.iter().map(|c| c.position).sum::<Vector3<f64>>() / cameras.len() as f64;
    let mut dist: Vec<f64> = cameras.iter().map(|c| (c.position - center).norm()).collect();
    dist.sort_by(f64::total_cmp);
    let radius = dist[dist.len() / 2];
    let spread = dist.last().copied().unwrap_or(0.0);
    if !(radius > 1e-9 * (1.0 + center.norm())) || !(spread > 0.0) {
        return Err(Error::invalid("camera positions are degenerate (coincident)"));
    }
    let size = 2.0 * radius * f64::powi(2.0, background_levels as i32);
    Ok((center, radius, SceneBounds::new(center.into(), size)?))
}

/// Background shell `k` (0 innermost) of an unbounded scene: the 56 voxels
/// of a 4^3 block minus its central 2^3.
pub fn shell_voxels(background_levels: u8, k: u8) -> Result<Vec<OctPath>> {
    let level = background_levels - k + 1;
    let mid = 1u32 << (level - 1);
    let mut out = Vec::with_capacity(56);
    for p in dense_block(level, mid - 2, mid + 2)? {
        let v = p.to_index();
        let inner = |x: u32| x == mid - 1 || x == mid;
        if !(inner(v.i) && inner(v.j) && inner(v.k)) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Unbounded layout: a dense `init_level` grid over the main region plus
/// `background_levels` shells, refined by repeatedly subdividing the shell
/// voxels with the highest sampling rate and dropping unobserved ones until
/// the background holds `background_ratio` times the foreground count.
pub fn init_unbounded<R: Real>(cameras: &[Camera], cfg: &TrainConfig) -> Result<SparseScene<R>> {
    let (_, _, bounds) = unbounded_region(cameras, cfg.background_levels)?;
    let out = cfg.background_levels;
    let level = out + cfg.init_level;
    if level > MAX_LEVEL {
        return Err(Error::invalid("init_level + background_levels exceeds the octree depth"));
    }
    let mut obs = Observer::new(bounds, cameras);
    let lo = (1u32 << (level - 1)) - (1u32 << (cfg.init_level - 1));
    let mut fg = dense_block(level, lo, lo + (1 << cfg.init_level))?;
    fg.retain(|p| obs.voxel(p));

    let mut bg = Vec::new();
    for k in 0..out {
        bg.extend(shell_voxels(out, k)?.into_iter().filter(|p| obs.voxel(p)));
    }
    let target = (cfg.background_ratio * fg.len() as f64).floor() as usize;
    while bg.len() + 7 <= target {
        let budget = (target - bg.len()) / 7;
        let rates: Vec<f64> = bg
            .iter()
            .map(|p| {
                if p.level() >= MAX_LEVEL {
                    return 0.0;
                }
                let (c, s) = voxel_geometry(&bounds, &p.to_index());
                max_sampling_rate(&c, s, cameras)
            })
            .collect();
        let top = rates.iter().copied().fold(0.0, f64::max);
        if top <= 0.0 {
            break;
        }
        // Children have half the rate of their parent, so everything within
        // a factor 2 of the maximum would be picked by one-at-a-time greedy
        // refinement before any child.
        let mut order: Vec<usize> = (0..bg.len()).filter(|&i| rates[i] >= 0.5 * top).collect();
        order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]).then(a.cmp(&b)));
        order.truncate(budget);
        let mut split = vec![false; bg.len()];
        for &i in &order {
            split[i] = true;
        }
        let mut next = Vec::with_capacity(bg.len() + 7 * order.len());
        for (i, p) in bg.iter().enumerate() {
            if split[i] {
                next.extend(p.children()?.into_iter().filter(|c| obs.voxel(c)));
            } else {
                next.push(*p);
            }
        }
        bg = next;
    }
    fg.extend(bg);
    build(bounds, fg, cfg)
}
