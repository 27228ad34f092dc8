//! Tile rasterizer: projection and binning, direction-dependent sorting,
//! front-to-back compositing, supersampling, the backward pass, and a
//! brute-force reference renderer.

mod backward;
mod composite;
mod downsample;
mod oracle;
mod project;
mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::MAX_SAMPLES;

pub use backward::{render_backward, BackwardOutput, ImageGradients, RayLossValues, RayLossWeights, SceneGradients};
pub use composite::{voxel_views, VoxelView};
pub use downsample::{AreaFilter, Resampler};
pub use oracle::{render_oracle, render_oracle_bruteforce};
pub use project::{
    build_sort_entries, pack_entry, project_voxel, sort_entries, tile_sign_patterns, SortEntry, TileGrid, TileRange,
    MAX_TILES,
};
pub use render::{render, render_train, ForwardState, PixelRecord};

/// Tiles are square blocks of this many pixels per side.
pub const TILE_SIZE: u32 = 16;
/// Median depth of rays whose transmittance never drops below 0.5.
pub const FAR_DEPTH: f64 = 1.0e10;
/// Corners at or behind this camera depth count as behind the camera.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderOptions {
    /// Samples per voxel.
    pub samples: usize,
    /// Stop compositing once transmittance falls below this.
    pub t_threshold: f64,
    /// Internal resolution factor; the image is rendered at
    /// `ceil(supersample * size)` and area-averaged down.
    pub supersample: f64,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            samples: 1,
            t_threshold: 1e-4,
            supersample: 1.5,
            background: [0.0; 3],
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SAMPLES).contains(&self.samples) {
            return Err(Error::invalid(format!("samples per voxel must be in 1..={MAX_SAMPLES}, got {}", self.samples)));
        }
        if !(self.t_threshold >= 0.0 && self.t_threshold < 1.0) {
            return Err(Error::invalid(format!("transmittance threshold {} outside [0, 1)", self.t_threshold)));
        }
        if !(self.supersample >= 1.0) || !self.supersample.is_finite() {
            return Err(Error::invalid(format!("supersample factor {} below 1", self.supersample)));
        }
        Ok(())
    }

    /// Internal render resolution for an output of `width` x `height`.
    pub fn internal_size(&self, width: u32, height: u32) -> (u32, u32) {
        let up = |n: u32| ((n as f64 * self.supersample) - 1e-9).ceil().max(n as f64) as u32;
        (up(width), up(height))
    }
}

/// Rendered buffers at output resolution, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Linear RGB, 3 values per pixel.
    pub color: Vec<f64>,
    /// Sum of transmittance-weighted voxel depths (not normalized by opacity).
    pub depth: Vec<f64>,
    /// Depth where transmittance first drops below 0.5, else [`FAR_DEPTH`].
    pub median_depth: Vec<f64>,
    /// Blend of voxel normals, 3 values per pixel.
    pub normal: Vec<f64>,
    pub transmittance: Vec<f64>,
    /// Per voxel, the largest blend weight over all rays of this view.
    pub max_weight: Option<Vec<f64>>,
}

impl RenderOutput {
    pub(crate) fn blank(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        RenderOutput {
            width,
            height,
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            median_depth: vec![0.0; n],
            normal: vec![0.0; 3 * n],
            transmittance: vec![0.0; n],
            max_weight: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }
}
