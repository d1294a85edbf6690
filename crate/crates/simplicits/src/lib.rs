//! Mesh-free elastic simulation on neural skinning-weight subspaces.
//!
//! Any input shape that can answer "is this point inside?" (an occupancy
//! function) is simulated the same way: a small MLP is trained as a field of
//! skinning weights that span a reduced deformation basis, and large
//! deformations are time-stepped with backward Euler over the per-handle
//! affine transforms. No mesh, grid, or training data is required.
//!
//! Pipeline:
//! 1. [`occupancy`] turns a geometry source (analytic primitive, OBJ mesh,
//!    point cloud, or density grid) into an [`occupancy::OccupancyField`]
//!    with material properties, sampled by Monte Carlo rejection.
//! 2. [`training`] fits an [`mlp::SkinningField`] by minimizing elastic
//!    energy under random handle perturbations plus a weight-orthogonality
//!    term.
//! 3. [`sim`] precomputes a fixed cubature, then steps reduced
//!    elastodynamics with projected Newton, penalty pins, and log-barrier
//!    ground contact.
//! 4. [`export`] maps geometry (points, meshes, Gaussian splats) through the
//!    deformation for each output frame.

pub mod cli;
pub mod elastic;
pub mod export;
pub mod formats;
pub mod linalg;
pub mod mlp;
pub mod occupancy;
pub mod scene;
pub mod sim;
pub mod training;

pub use elastic::{EnergyKind, HandleTransforms};
pub use mlp::SkinningField;
pub use occupancy::OccupancyField;
pub use scene::SceneConfig;
