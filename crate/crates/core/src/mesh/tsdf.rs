//! TSDF fusion onto the sparse grid points.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::SparseScene;

/// A posed depth map; depth is the camera-space z of the surface per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthView {
    pub camera: Camera,
    pub depth: Vec<f64>,
}

/// Fused signed distance per grid point, aligned with the density pool.
/// Positive in front of the surfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfField {
    pub sdf: Vec<f64>,
    /// Number of views that observed the point; unobserved points hold the
    /// truncation distance with weight 0.
    pub weight: Vec<f64>,
    pub truncation: f64,
}

/// Projects every grid point into every view and averages the truncated
/// distances `depth(pixel) - z` over the views where it is not more than
/// `truncation` behind the surface. Pixels are picked by nearest center.
pub fn tsdf_fuse<R: Real>(scene: &SparseScene<R>, views: &[DepthView], truncation: f64) -> Result<TsdfField> {
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(Error::invalid(format!("truncation must be positive, got {truncation}")));
    }
    for v in views {
        let n = (v.camera.width * v.camera.height) as usize;
        if v.depth.len() != n {
            return Err(Error::invalid(format!("depth map has {} values, camera has {n} pixels", v.depth.len())));
        }
    }
    let (sdf, weight) = scene
        .pool_positions()
        .par_iter()
        .map(|p| {
            let (mut sum, mut w) = (0.0, 0.0);
            for v in views {
                let (u, y, z) = v.camera.project(p);
                if !(z > 0.0) {
                    continue;
                }
                let (ix, iy) = (u.round(), y.round());
                if ix < 0.0 || iy < 0.0 || ix >= v.camera.width as f64 || iy >= v.camera.height as f64 {
                    continue;
                }
                let depth = v.depth[iy as usize * v.camera.width as usize + ix as usize];
                let d = depth - z;
                if d.is_nan() || d <= -truncation {
                    continue;
                }
                sum += d.clamp(-truncation, truncation);
                w += 1.0;
            }
            if w > 0.0 {
                (sum / w, w)
            } else {
                (truncation, 0.0)
            }
        })
        .unzip();
    Ok(TsdfField {
        sdf,
        weight,
        truncation,
    })
}
