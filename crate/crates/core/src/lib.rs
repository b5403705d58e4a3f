//! Surface reconstruction from sparse 3D point clouds by fitting a point
//! distribution model (PDM) with anisotropic Gaussian mixtures.
//!
//! The crate is organised by role:
//!
//! - [`model`]: the PDM itself (PCA construction, deformation, shape prior).
//! - [`geometry`]: mesh topology, vertex normals, surface-aligned covariances,
//!   surface/contour sampling and noise models.
//! - [`fitting`]: the EM engine (E-step, MAP Q-function and its gradient,
//!   linear and quasi-Newton M-steps, the outer loop).
//! - [`baselines`]: Tikhonov-regularised ICP and its anisotropic variant.
//! - [`evaluation`]: voxel Dice, surface distances, vertex RMSE and the
//!   convergence benchmark.
//! - [`io`]: JSON/CSV/OFF formats.
//! - [`synth`]: synthetic shape models and meshes used by the CLI and tests.
//! - [`cli`]: the `ssmfit` command line.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod model;
pub mod result;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{MeshTopology, SparsePointSet, Vec3};
pub use model::{DeformationParams, ShapeModel};
pub use result::{FitResult, Method};

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
