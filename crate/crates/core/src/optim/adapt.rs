use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::Result;
use crate::raster::{render, RenderOptions};
use crate::real::Real;
use crate::scene::{Remap, SparseScene};

/// Per-voxel statistics driving pruning and subdivision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelStats {
    pub max_weight: Vec<f64>,
    pub priority: Vec<f64>,
    pub sampling_rate: Vec<f64>,
}

impl VoxelStats {
    pub fn zeros(n: usize) -> Self {
        VoxelStats {
            max_weight: vec![0.0; n],
            priority: vec![0.0; n],
            sampling_rate: vec![0.0; n],
        }
    }
}

/// Sampling rate of a voxel seen from one camera: voxel size over the
/// footprint of a pixel at the voxel's depth along the look-at axis. Zero
/// when the voxel center is not in front of the camera.
pub fn sampling_rate(center: &Vector3<f64>, size: f64, cam: &Camera) -> f64 {
    let z = (center - cam.position).dot(&cam.lookat());
    if z <= 0.0 {
        return 0.0;
    }
    let pixel = (0.5 * cam.fov_x()).tan() / (0.5 * cam.width as f64);
    size / (z * pixel)
}

/// Largest [`sampling_rate`] over the cameras.
pub fn max_sampling_rate(center: &Vector3<f64>, size: f64, cameras: &[Camera]) -> f64 {
    cameras.iter().map(|c| sampling_rate(center, size, c)).fold(0.0, f64::max)
}

pub fn sampling_rates<R: Real>(scene: &SparseScene<R>, cameras: &[Camera]) -> Vec<f64> {
    (0..scene.len())
        .map(|v| {
            let (c, s) = scene.geometry(v);
            max_sampling_rate(&c, s, cameras)
        })
        .collect()
}

/// Largest blend weight of every voxel over all cameras.
pub fn gather_max_weight<R: Real>(scene: &SparseScene<R>, cameras: &[Camera], opts: &RenderOptions) -> Result<Vec<f64>> {
    let mut best = vec![0.0; scene.len()];
    for cam in cameras {
        let out = render(scene, cam, opts, true)?;
        for (b, w) in best.iter_mut().zip(out.max_weight.expect("stats requested")) {
            *b = f64::max(*b, w);
        }
    }
    Ok(best)
}

/// Removes voxels whose max blend weight is below `threshold`. Grid points
/// used by no remaining voxel go with them.
pub fn prune<R: Real>(scene: &mut SparseScene<R>, max_weight: &[f64], threshold: f64) -> Remap {
    let keep: Vec<bool> = max_weight.iter().map(|w| *w >= threshold).collect();
    scene.retain(&keep)
}

/// Voxels to subdivide: the top `round(N * percent / 100)` by priority,
/// where voxels with a sampling rate below `2 * rate_threshold`, zero
/// priority, or already at the deepest level never qualify. Ties break
/// towards the lower index.
pub fn select_for_subdivision<R: Real>(
    scene: &SparseScene<R>,
    priority: &[f64],
    rates: &[f64],
    percent: f64,
    rate_threshold: f64,
) -> Vec<usize> {
    let budget = (scene.len() as f64 * percent / 100.0).round() as usize;
    let mut cand: Vec<usize> = (0..scene.len())
        .filter(|&v| {
            priority[v] > 0.0 && rates[v] >= 2.0 * rate_threshold && scene.octpaths[v].level() < crate::octree::MAX_LEVEL
        })
        .collect();
    cand.sort_by(|&a, &b| priority[b].total_cmp(&priority[a]).then(a.cmp(&b)));
    cand.truncate(budget);
    cand.sort_unstable();
    cand
}

/// Subdivides the selected voxels, see [`select_for_subdivision`].
pub fn subdivide_by_priority<R: Real>(
    scene: &mut SparseScene<R>,
    priority: &[f64],
    rates: &[f64],
    percent: f64,
    rate_threshold: f64,
) -> Remap {
    let chosen = select_for_subdivision(scene, priority, rates, percent, rate_threshold);
    scene.subdivide(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{OctPath, SceneBounds};
    use nalgebra::Matrix3;

    fn axis_camera(w: u32, f: f64) -> Camera {
        Camera::new(w, w, f, f, w as f64 / 2.0, w as f64 / 2.0, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn on_axis_rate() {
        let cam = axis_camera(100, 80.0);
        let c = Vector3::new(0.0, 0.0, 4.0);
        let want = 0.5 * 0.5 * 100.0 / (4.0 * (0.5 * cam.fov_x()).tan());
        assert!((sampling_rate(&c, 0.5, &cam) - want).abs() < 1e-12);
        // on axis this is s * fx / D
        assert!((want - 0.5 * 80.0 / 4.0).abs() < 1e-12);
        assert!((sampling_rate(&c, 0.25, &cam) - want / 2.0).abs() < 1e-12);
        assert_eq!(sampling_rate(&-c, 0.5, &cam), 0.0);
        let cams = [cam.clone(), axis_camera(200, 160.0)];
        assert!((max_sampling_rate(&c, 0.5, &cams) - 2.0 * want).abs() < 1e-12);
    }

    #[test]
    fn selection_respects_rate_gate_and_budget() {
        let b = SceneBounds::new([0.0; 3], 2.0).unwrap();
        let v: Vec<OctPath> = (0..8u64).map(|c| OctPath::new(c << 45, 1).unwrap()).collect();
        let s = SparseScene::<f64>::from_voxels(b, 0, &v, 0.0, &[0.0; 3]).unwrap();
        let pri = [5.0, 1.0, 0.0, 9.0, 3.0, 4.0, 2.0, 8.0];
        let mut rates = [10.0; 8];
        rates[3] = 1.5;
        assert_eq!(select_for_subdivision(&s, &pri, &rates, 25.0, 1.0), vec![0, 7]);
        assert_eq!(select_for_subdivision(&s, &[0.0; 8], &rates, 100.0, 1.0), Vec::<usize>::new());
        assert_eq!(select_for_subdivision(&s, &pri, &rates, 100.0, 1.0).len(), 6);
    }
}
