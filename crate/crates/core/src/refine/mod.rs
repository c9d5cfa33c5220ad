//! Surface-based refinement of a point cloud: oriented normals and
//! per-point scales, a floating-scale implicit surface meshed by marching
//! cubes, small-component cleaning, implicit curvature-flow smoothing and
//! blue-noise resampling.

mod mesh;
mod normals;
mod resample;
mod surface;

use nalgebra::Vector3;

pub use mesh::{clean_mesh, icosphere, smooth_curvature_flow};
pub use normals::{estimate_normals, estimate_scales};
pub use resample::{poisson_disc_resample, sample_surface};
pub use surface::reconstruct_surface;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, SeededRng, TriangleMesh};

/// Points with unit normals and positive spatial scales.
#[derive(Debug, Clone)]
pub struct OrientedCloud {
    pub points: PointCloud,
    pub normals: Vec<Vector3<f64>>,
    pub scales: Vec<f64>,
}

impl OrientedCloud {
    pub fn new(points: PointCloud, normals: Vec<Vector3<f64>>, scales: Vec<f64>) -> Result<Self> {
        if normals.len() != points.len() || scales.len() != points.len() {
            return Err(Error::SizeMismatch { left: points.len(), right: normals.len().min(scales.len()) });
        }
        if let Some(i) = normals.iter().position(|n| !((n.norm() - 1.0).abs() <= 1e-9)) {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
        }
        if let Some(i) = scales.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("scale {i} is not positive")));
        }
        Ok(OrientedCloud { points, normals, scales })
    }

    /// Normals and scales estimated from the points alone.
    pub fn estimate(points: PointCloud, k: usize) -> Result<Self> {
        let normals = estimate_normals(&points, k)?;
        let scales = estimate_scales(&points)?;
        OrientedCloud::new(points, normals, scales)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub knn_for_normals: usize,
    pub smooth_iters: usize,
    /// Dimensionless backward-Euler step of the curvature flow.
    pub smooth_step: f64,
    pub grid_resolution: usize,
    /// Support radius of each sample's weight, in units of its scale.
    pub support_radius_factor: f64,
    pub min_component_faces: usize,
    /// Output size of the pipeline; `None` keeps the input size.
    pub resample_count: Option<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            knn_for_normals: 6,
            smooth_iters: 5,
            smooth_step: 0.1,
            grid_resolution: 64,
            support_radius_factor: 3.0,
            min_component_faces: 20,
            resample_count: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("knn_for_normals", self.knn_for_normals),
            ("smooth_iters", self.smooth_iters),
            ("grid_resolution", self.grid_resolution),
            ("min_component_faces", self.min_component_faces),
            ("resample_count", self.resample_count.unwrap_or(1)),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.grid_resolution < 2 {
            return Err(Error::InvalidArgument("grid_resolution must be at least 2".into()));
        }
        for (name, v) in [("smooth_step", self.smooth_step), ("support_radius_factor", self.support_radius_factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Result of [`refine_pipeline`], including the intermediate meshes.
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub cloud: PointCloud,
    /// Minimum pairwise distance of `cloud`.
    pub radius: f64,
    pub fitted_mesh: TriangleMesh,
    pub smoothed_mesh: TriangleMesh,
}

/// Normals → scales → surface → cleaning → smoothing → resampling. Errors
/// are tagged with the stage that raised them.
pub fn refine_pipeline(cloud: &PointCloud, cfg: &RefineConfig, rng: &mut SeededRng) -> Result<RefineOutput> {
    cfg.validate()?;
    let normals = estimate_normals(cloud, cfg.knn_for_normals).map_err(|e| e.in_stage("normals"))?;
    let scales = estimate_scales(cloud).map_err(|e| e.in_stage("scales"))?;
    let oc = OrientedCloud::new(cloud.clone(), normals, scales)?;
    let fitted = reconstruct_surface(&oc, cfg).map_err(|e| e.in_stage("surface"))?;
    let cleaned = clean_mesh(&fitted, cfg.min_component_faces);
    if cleaned.faces.is_empty() {
        return Err(Error::NoSurface.in_stage("clean"));
    }
    let smoothed = smooth_curvature_flow(&cleaned, cfg.smooth_iters, cfg.smooth_step).map_err(|e| e.in_stage("smooth"))?;
    let n = cfg.resample_count.unwrap_or(cloud.len());
    let (out, radius) = poisson_disc_resample(&smoothed, n, rng).map_err(|e| e.in_stage("resample"))?;
    Ok(RefineOutput { cloud: out, radius, fitted_mesh: cleaned, smoothed_mesh: smoothed })
}
