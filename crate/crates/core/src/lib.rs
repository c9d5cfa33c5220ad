//! Point-cloud reconstruction geometry toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`geom`]: point clouds, meshes, masks, cameras, exact nearest-neighbour
//!   search, seeded randomness and the text file formats.
//! - [`metrics`]: Chamfer distance, Earth Mover's Distance and mask IoU.
//! - [`projection`]: perspective and orthographic views of point sets.
//! - [`losses`]: the 3D Chamfer, multi-view reprojection and silhouette
//!   losses, their weighted sum and analytic gradients.
//! - [`fitter`]: Adam over free point coordinates and the 2x2 folding
//!   up-sampler.
//! - [`refine`]: normals, scales, implicit surface extraction, mesh cleaning,
//!   curvature-flow smoothing and Poisson-disc resampling.
//! - [`occlusion`]: cut-and-paste occlusion synthesis and image augmentation.
//! - [`eval`]: ICP and the reconstruction evaluation protocols.

pub mod error;
pub mod eval;
pub mod fitter;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod occlusion;
pub mod projection;
pub mod refine;

pub use error::{Error, Result};
pub use geom::{BinaryMask, Camera, NnIndex, PointCloud, SeededRng, TriangleMesh};
