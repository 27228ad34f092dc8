//! Sparse-voxel radiance fields.
//!
//! Scenes are stored as leaf cells of a conceptual octree (no pointers, no
//! ancestors) with densities on shared grid points and spherical-harmonic
//! colors per voxel. Rendering goes through a tile rasterizer that sorts
//! voxels by a ray-direction-dependent Morton order, which is exact front to
//! back for every ray in the tile. On top of the renderer sit the analytic
//! backward pass, the progressive optimizer, and grid-native mesh extraction.

pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod field;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod octree;
pub mod optim;
pub mod raster;
pub mod real;
pub mod scene;
pub mod synth;

pub use camera::{Camera, Ray};
pub use error::{Error, Result};
pub use octree::{OctPath, SceneBounds, SignBits, VoxelIndex, MAX_LEVEL};
pub use real::Real;
pub use scene::SparseScene;
