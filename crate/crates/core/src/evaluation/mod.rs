//! Accuracy metrics (voxel Dice, surface distance, vertex RMSE) and the
//! convergence benchmark.

mod benchmark;
mod distance;
mod voxel;

pub use benchmark::{benchmark_convergence, normalize, BenchmarkConfig, BenchmarkRecord, BenchmarkTable};
pub use distance::{closest_point_on_triangle, point_mesh_distance, surface_distance, vertex_rmse};
pub use voxel::{dice, voxelize, voxelize_on, GridSpec, VoxelGrid};

use crate::error::Result;
use crate::geometry::{bounding_box_diagonal, MeshTopology, Vec3};

/// Default voxel spacing for Dice: 1/128 of the bounding-box diagonal.
pub fn default_dice_spacing(positions: &[Vec3]) -> f64 {
    bounding_box_diagonal(positions) / 128.0
}

/// Dice coefficient of two closed meshes voxelised on a common grid
/// covering both (spacing defaults to [`default_dice_spacing`] of `a`).
pub fn mesh_dice(
    positions_a: &[Vec3],
    topology_a: &MeshTopology,
    positions_b: &[Vec3],
    topology_b: &MeshTopology,
    spacing: Option<f64>,
) -> Result<f64> {
    let h = spacing.unwrap_or_else(|| default_dice_spacing(positions_a));
    let spec = GridSpec::covering(&[positions_a, positions_b], h)?;
    let a = voxelize_on(positions_a, topology_a, &spec)?;
    let b = voxelize_on(positions_b, topology_b, &spec)?;
    dice(&a, &b)
}
