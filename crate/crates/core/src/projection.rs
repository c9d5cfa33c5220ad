//! Perspective and orthographic projection of point sets, and mask sampling.

use std::str::FromStr;

use nalgebra::{Matrix2x3, Point3};

use crate::error::{Error, Result};
use crate::geom::{BinaryMask, Camera, PointCloud};

/// Smallest camera-space depth accepted by the perspective view.
pub const MIN_DEPTH: f64 = 1e-9;

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Point2Set {
    pub points: Vec<Point2>,
}

impl Point2Set {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewSpec {
    Perspective(Camera),
    /// keeps (x, y)
    OrthoXY,
    /// keeps (y, z); the frontal image-plane view
    OrthoYZ,
    /// keeps (x, z)
    OrthoXZ,
}

impl ViewSpec {
    /// Views used by the multi-view reprojection loss by default.
    pub fn default_proj_views() -> Vec<ViewSpec> {
        vec![ViewSpec::OrthoXY, ViewSpec::OrthoXZ]
    }

    /// Projects one point (index is only used for error reporting).
    pub fn project_point(&self, p: &Point3<f64>, index: usize) -> Result<Point2> {
        Ok(self.project_with_jacobian(p, index)?.0)
    }

    /// Projection of `p` and the 2x3 Jacobian of the projection at `p`.
    pub fn project_with_jacobian(&self, p: &Point3<f64>, index: usize) -> Result<(Point2, Matrix2x3<f64>)> {
        Ok(match self {
            ViewSpec::OrthoXY => ([p.x, p.y], Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)),
            ViewSpec::OrthoYZ => ([p.y, p.z], Matrix2x3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)),
            ViewSpec::OrthoXZ => ([p.x, p.z], Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0)),
            ViewSpec::Perspective(cam) => {
                let c = cam.rotation * p.coords + cam.translation;
                if !(c.z > MIN_DEPTH) {
                    return Err(Error::BehindCamera { index, depth: c.z });
                }
                let iz = 1.0 / c.z;
                let uv = [cam.fx * c.x * iz + cam.cx, cam.fy * c.y * iz + cam.cy];
                let d = Matrix2x3::new(
                    cam.fx * iz,
                    0.0,
                    -cam.fx * c.x * iz * iz,
                    0.0,
                    cam.fy * iz,
                    -cam.fy * c.y * iz * iz,
                );
                (uv, d * cam.rotation)
            }
        })
    }
}

impl FromStr for ViewSpec {
    type Err = Error;

    /// Orthographic views by name (`ortho-xy`, `ortho-yz`, `ortho-xz`).
    /// Perspective views need a camera and are built directly.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ortho-xy" | "xy" => Ok(ViewSpec::OrthoXY),
            "ortho-yz" | "yz" => Ok(ViewSpec::OrthoYZ),
            "ortho-xz" | "xz" => Ok(ViewSpec::OrthoXZ),
            other => Err(Error::InvalidArgument(format!("unknown view {other:?}"))),
        }
    }
}

pub fn project(cloud: &PointCloud, view: &ViewSpec) -> Result<Point2Set> {
    let points = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| view.project_point(p, i))
        .collect::<Result<_>>()?;
    Ok(Point2Set { points })
}

/// One point per foreground pixel at its centre `(col + 0.5, row + 0.5)`,
/// in row-major order.
pub fn mask_to_points(mask: &BinaryMask) -> Point2Set {
    let mut points = Vec::with_capacity(mask.count());
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                points.push([c as f64 + 0.5, r as f64 + 0.5]);
            }
        }
    }
    Point2Set { points }
}
