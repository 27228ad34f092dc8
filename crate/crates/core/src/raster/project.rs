use nalgebra::Vector3;
use rayon::prelude::*;

use super::{NEAR_PLANE, TILE_SIZE};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::octree::{dir_dep_order, OctPath, SignBits};
use crate::real::Real;
use crate::scene::{SparseScene, MAX_VOXELS};

/// Tile ids must fit the top 16 bits of the sort key.
pub const MAX_TILES: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        if (tiles_x as usize) * (tiles_y as usize) > MAX_TILES {
            return Err(Error::Capacity(format!("{width}x{height} needs more than {MAX_TILES} tiles")));
        }
        Ok(TileGrid {
            width,
            height,
            tiles_x,
            tiles_y,
        })
    }

    pub fn tile_count(&self) -> usize {
        (self.tiles_x * self.tiles_y) as usize
    }

    /// Inclusive pixel bounds `(x0, x1, y0, y1)` of a tile.
    pub fn tile_pixels(&self, tile: usize) -> (u32, u32, u32, u32) {
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(self.width) - 1, y0, (y0 + TILE_SIZE).min(self.height) - 1)
    }
}

/// Inclusive tile index range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRange {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl TileRange {
    pub fn tiles(&self, grid: &TileGrid) -> impl Iterator<Item = usize> + '_ {
        let tx = grid.tiles_x;
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| (y * tx + x) as usize))
    }

    pub fn count(&self) -> usize {
        ((self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)) as usize
    }
}

/// Screen-space bounding box of a voxel's 8 projected corners, in pixel-index
/// coordinates `[u_min, u_max, v_min, v_max]`, and the covered tiles. A voxel
/// with only some corners in front of the camera covers the whole screen;
/// one with every corner behind the near plane yields `None`.
pub fn project_voxel(
    cam: &Camera,
    grid: &TileGrid,
    center: &Vector3<f64>,
    size: f64,
) -> Option<([f64; 4], TileRange)> {
    let (bbox, [x0, x1, y0, y1]) = pixel_rect(cam, grid.width, grid.height, center, size)?;
    let t = TILE_SIZE;
    let range = TileRange {
        x0: x0 / t,
        x1: x1 / t,
        y0: y0 / t,
        y1: y1 / t,
    };
    Some((bbox, range))
}

/// Projected bounding box and the inclusive pixel rectangle `[x0, x1, y0, y1]`
/// of pixels whose center rays may hit the voxel.
pub(crate) fn pixel_rect(
    cam: &Camera,
    width: u32,
    height: u32,
    center: &Vector3<f64>,
    size: f64,
) -> Option<([f64; 4], [u32; 4])> {
    let mut bbox = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut behind = 0;
    for c in 0..8 {
        let off = Vector3::new((c >> 2) as f64 - 0.5, ((c >> 1) & 1) as f64 - 0.5, (c & 1) as f64 - 0.5);
        let (u, v, z) = cam.project(&(center + off * size));
        if z <= NEAR_PLANE {
            behind += 1;
            continue;
        }
        bbox = [bbox[0].min(u), bbox[1].max(u), bbox[2].min(v), bbox[3].max(v)];
    }
    if behind == 8 {
        return None;
    }
    let (w, h) = (width as f64, height as f64);
    if behind > 0 {
        bbox = [0.0, w - 1.0, 0.0, h - 1.0];
    }
    // pixel p is hit only if its center projection (at index p) is inside the hull
    let pad = 1e-6 * (1.0 + bbox[1].abs().max(bbox[3].abs()));
    let (x0, x1) = ((bbox[0] - pad).ceil().max(0.0), (bbox[1] + pad).floor().min(w - 1.0));
    let (y0, y1) = ((bbox[2] - pad).ceil().max(0.0), (bbox[3] + pad).floor().min(h - 1.0));
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((bbox, [x0 as u32, x1 as u32, y0 as u32, y1 as u32]))
}

/// Bit `s` of the mask is set when some pixel ray of the tile may carry sign
/// pattern `s`. Each world component of the ray direction is affine in the
/// pixel position, so its extremes over the tile sit at the corner pixels.
pub fn tile_sign_patterns(cam: &Camera, grid: &TileGrid, tile: usize) -> u8 {
    let (x0, x1, y0, y1) = grid.tile_pixels(tile);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (x, y) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        let d = cam.pixel_ray(x as f64, y as f64).dir;
        lo = lo.inf(&d);
        hi = hi.sup(&d);
    }
    let axis_options = |a: usize| -> [bool; 2] { [hi[a] >= 0.0, lo[a] < 0.0] };
    let (ox, oy, oz) = (axis_options(0), axis_options(1), axis_options(2));
    let mut mask = 0u8;
    for s in 0..8usize {
        if ox[(s >> 2) & 1] && oy[(s >> 1) & 1] && oz[s & 1] {
            mask |= 1 << s;
        }
    }
    mask
}

/// Packed key-value pair: key = tile id (16 bits) | direction-dependent
/// Morton order (48 bits); value = sign bits (3 bits) | voxel id (29 bits).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SortEntry {
    pub key: u64,
    pub value: u32,
}

impl SortEntry {
    pub fn tile(&self) -> usize {
        (self.key >> 48) as usize
    }

    pub fn voxel(&self) -> usize {
        (self.value & ((1 << 29) - 1)) as usize
    }

    pub fn sign_bits(&self) -> u8 {
        (self.value >> 29) as u8
    }
}

pub fn pack_entry(tile: usize, path: &OctPath, sign: SignBits, voxel: usize) -> SortEntry {
    debug_assert!(tile < MAX_TILES && voxel < MAX_VOXELS);
    SortEntry {
        key: ((tile as u64) << 48) | dir_dep_order(path, sign),
        value: ((sign.bits() as u32) << 29) | voxel as u32,
    }
}

/// One entry per (voxel, covered tile, sign pattern of that tile), unsorted.
pub fn build_sort_entries<R: Real>(
    scene: &SparseScene<R>,
    cam: &Camera,
    grid: &TileGrid,
    tile_masks: &[u8],
) -> Result<Vec<SortEntry>> {
    if scene.len() >= MAX_VOXELS {
        return Err(Error::Capacity(format!("{} voxels exceed the limit of {MAX_VOXELS}", scene.len())));
    }
    let rects = voxel_rects(scene, cam);
    Ok(entries_from_rects(scene, &rects, grid, tile_masks))
}

/// Pixel rectangle of every voxel, see [`pixel_rect`].
pub(crate) fn voxel_rects<R: Real>(scene: &SparseScene<R>, cam: &Camera) -> Vec<Option<[u32; 4]>> {
    (0..scene.len())
        .into_par_iter()
        .map(|v| {
            let (c, s) = scene.geometry(v);
            pixel_rect(cam, cam.width, cam.height, &c, s).map(|(_, r)| r)
        })
        .collect()
}

pub(crate) fn entries_from_rects<R: Real>(
    scene: &SparseScene<R>,
    rects: &[Option<[u32; 4]>],
    grid: &TileGrid,
    tile_masks: &[u8],
) -> Vec<SortEntry> {
    let t = TILE_SIZE;
    let mut entries = Vec::new();
    for (v, rect) in rects.iter().enumerate() {
        let Some([x0, x1, y0, y1]) = *rect else { continue };
        let range = TileRange {
            x0: x0 / t,
            x1: x1 / t,
            y0: y0 / t,
            y1: y1 / t,
        };
        let path = &scene.octpaths[v];
        for tile in range.tiles(grid) {
            let mask = tile_masks[tile];
            for s in 0..8u8 {
                if mask & (1 << s) != 0 {
                    entries.push(pack_entry(tile, path, SignBits::new(s).expect("3-bit pattern"), v));
                }
            }
        }
    }
    entries
}

/// Ascending by key, ties broken by value so the result never depends on
/// input order.
pub fn sort_entries(entries: &mut [SortEntry]) {
    entries.par_sort_unstable();
}

/// Start offset of each tile's run; `offsets[t]..offsets[t + 1]`.
pub(crate) fn tile_offsets(entries: &[SortEntry], tiles: usize) -> Vec<usize> {
    let mut offsets = vec![0usize; tiles + 1];
    for e in entries {
        offsets[e.tile() + 1] += 1;
    }
    for t in 0..tiles {
        offsets[t + 1] += offsets[t];
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::ray_sign_bits;
    use nalgebra::Matrix3;

    fn cam_identity(w: u32, h: u32) -> Camera {
        Camera::new(w, h, 40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn axis_voxel_projects_to_center() {
        let cam = cam_identity(64, 48);
        let grid = TileGrid::new(64, 48).unwrap();
        let (bbox, _) = project_voxel(&cam, &grid, &Vector3::new(0.0, 0.0, 5.0), 1.0).unwrap();
        // pixel-index coordinates put the principal point at c - 0.5
        assert!(((bbox[0] + bbox[1]) / 2.0 - 31.5).abs() < 1e-9);
        assert!(((bbox[2] + bbox[3]) / 2.0 - 23.5).abs() < 1e-9);
        assert!(project_voxel(&cam, &grid, &Vector3::new(0.0, 0.0, -5.0), 1.0).is_none());
        let (_, full) = project_voxel(&cam, &grid, &Vector3::new(0.0, 0.0, 0.2), 1.0).unwrap();
        assert_eq!(full.count(), grid.tile_count());
    }

    #[test]
    fn sign_patterns_cover_every_pixel() {
        let cam = Camera::look_at(
            80,
            64,
            90.0,
            Vector3::new(0.3, -0.2, 0.1),
            Vector3::new(5.0, 0.1, 0.05),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let grid = TileGrid::new(80, 64).unwrap();
        let mut saw_double = false;
        for tile in 0..grid.tile_count() {
            let mask = tile_sign_patterns(&cam, &grid, tile);
            saw_double |= mask.count_ones() == 2;
            let (x0, x1, y0, y1) = grid.tile_pixels(tile);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let s = ray_sign_bits(&cam.pixel_ray(x as f64, y as f64).dir).bits();
                    assert!(mask & (1 << s) != 0);
                }
            }
        }
        // the view straddles the y = 0 and z = 0 planes of ray directions
        assert!(saw_double);
    }

    #[test]
    fn narrow_view_has_one_pattern() {
        let cam = Camera::look_at(
            64,
            64,
            20.0,
            Vector3::new(-5.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let grid = TileGrid::new(64, 64).unwrap();
        for tile in 0..grid.tile_count() {
            assert_eq!(tile_sign_patterns(&cam, &grid, tile), 1 << 0);
        }
    }

    #[test]
    fn entry_packing() {
        let p = OctPath::new(0b101 << 45, 1).unwrap();
        let e = pack_entry(7, &p, SignBits::new(0b011).unwrap(), 12345);
        assert_eq!(e.tile(), 7);
        assert_eq!(e.voxel(), 12345);
        assert_eq!(e.sign_bits(), 3);
        assert_eq!(e.key & ((1 << 48) - 1), dir_dep_order(&p, SignBits::new(0b011).unwrap()));
        assert_eq!(e.key >> 45 & 0b111, 0b110);
    }

    #[test]
    fn offsets_delimit_runs() {
        let p = OctPath::new(0, 1).unwrap();
        let s = SignBits::new(0).unwrap();
        let mut entries = vec![pack_entry(2, &p, s, 0), pack_entry(0, &p, s, 1), pack_entry(2, &p, s, 2)];
        sort_entries(&mut entries);
        assert_eq!(tile_offsets(&entries, 4), vec![0, 1, 1, 3, 3]);
    }
}
