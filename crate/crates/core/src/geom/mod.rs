//! Geometric primitives shared by every other module.

mod io;
mod nn;
mod rng;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

pub use io::*;
pub use nn::NnIndex;
pub(crate) use nn::dist2;
pub use rng::SeededRng;

/// Ordered list of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite coordinate at point {i}")));
        }
        Ok(Self { points })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self) -> NnIndex {
        NnIndex::new(&self.points)
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Applies `p -> R p + t` to every point.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point3::from(rotation * p.coords + translation))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(f).collect())
    }
}

/// Result of [`normalize_unit`]: `cloud = (input - centroid) / scale`.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub centroid: Point3<f64>,
    pub scale: f64,
}

impl Normalized {
    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| Point3::from(p.coords * self.scale + self.centroid.coords))
                .collect(),
        }
    }
}

/// Centres the cloud at the origin and rescales it so the longest
/// bounding-box extent equals 1.
pub fn normalize_unit(cloud: &PointCloud) -> Result<Normalized> {
    let centroid = cloud.centroid().ok_or(Error::Empty("point cloud"))?;
    let (lo, hi) = cloud.bounds().unwrap();
    let scale = (hi - lo).max();
    if scale <= 0.0 {
        return Err(Error::Degenerate("zero-extent point cloud".into()));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| Point3::from((p - centroid) / scale))
        .collect();
    Ok(Normalized {
        cloud: PointCloud { points },
        centroid,
        scale,
    })
}

/// Draws exactly `n` points: without replacement when the cloud is large
/// enough, with replacement otherwise.
pub fn sample_fixed_n(cloud: &PointCloud, n: usize, rng: &mut SeededRng) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    let m = cloud.len();
    let picks: Vec<usize> = if n <= m {
        // partial Fisher-Yates
        let mut idx: Vec<usize> = (0..m).collect();
        for i in 0..n {
            let j = i + rng.below(m - i);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx
    } else {
        (0..n).map(|_| rng.below(m)).collect()
    };
    Ok(PointCloud {
        points: picks.into_iter().map(|i| cloud.points[i]).collect(),
    })
}

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .vertices
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidArgument(format!("non-finite vertex {i}")));
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidArgument(format!("face {fi} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume (divergence theorem); positive for outward
    /// counter-clockwise winding on a closed surface.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }
}

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.same_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a || b)
    }

    /// `self \ other`
    pub fn minus(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.same_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    /// Tight bounds of the foreground as `(top, left, bottom, right)`,
    /// bottom/right exclusive.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut out: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out = Some(match out {
                        None => (r, c, r + 1, c + 1),
                        Some((t, l, b, rt)) => (t.min(r), l.min(c), b.max(r + 1), rt.max(c + 1)),
                    });
                }
            }
        }
        out
    }
}

/// Pinhole camera: `x' = R p + t`, `u = fx x'/z' + cx`, `v = fy y'/z' + cy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        check_rotation(&rotation)?;
        if !(cx.is_finite() && cy.is_finite() && translation.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite camera parameter".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera at the origin looking down +z.
    pub fn looking_down_z(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(fx, fy, cx, cy, Matrix3::identity(), Vector3::zeros())
    }
}

/// Checks orthonormality and `det = +1` to within 1e-9.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-9) || !((r.determinant() - 1.0).abs() <= 1e-9) {
        return Err(Error::InvalidArgument("matrix is not a proper rotation".into()));
    }
    Ok(())
}
