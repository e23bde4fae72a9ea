//! Panoramic geometry and depth toolkit.
//!
//! - [`geometry`]: pinhole and equirectangular angle maps
//! - [`projection`]: perspective ⇄ equirectangular warping
//! - [`embedding`]: fixed spherical sine-cosine embedding
//! - [`vit`]: toy cross-attention model with analytic gradients
//! - [`losses`]: median/affine alignment, distance-to-normal, training losses
//! - [`metrics`]: AbsRel, RMSE, δ₁, δ₂
//! - [`curation`]: perspective → panorama sample generation
//! - [`pointcloud`]: distance maps to point clouds, PLY I/O
//! - [`synthetic`]: analytic scenes for tests and demos
//! - [`io`]: the `PSR1` raster container

pub mod curation;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod pointcloud;
pub mod projection;
pub mod raster;
pub mod synthetic;
pub mod vit;

pub use error::{Error, Result};
pub use geometry::{ErpGrid, PerspectiveCamera, SphericalAngle, Vec3};
pub use raster::{ErpRaster, PerspectiveRaster, RasterKind};
