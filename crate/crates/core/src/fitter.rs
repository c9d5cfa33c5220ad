//! Direct point-set optimisation under the weighted objective, and the
//! deterministic 2x2 folding up-sampler.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{sample_fixed_n, BinaryMask, Camera, PointCloud, SeededRng};
use crate::losses::{LossBreakdown, LossWeights, Objective};
use crate::projection::ViewSpec;

/// Grid side length of the up-sampling patch.
pub const FOLD_SIDE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// uniform on the unit sphere surface
    UnitSphere,
    /// uniform in [-0.5, 0.5]^3
    UnitCube,
    /// resampled from the given cloud
    FromCloud(PointCloud),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_coarse: usize,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub max_iters: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub init: InitMode,
    /// views of the multi-view reprojection term
    pub views: Vec<ViewSpec>,
    /// Stop once the best total has not improved by more than
    /// `stall_tol * best` for this many consecutive iterations. 0 disables.
    pub stall_patience: usize,
    pub stall_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_coarse: 1024,
            learning_rate: 1e-4,
            adam_eps: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            max_iters: 1000,
            weights: LossWeights::standard(),
            seed: 0,
            init: InitMode::UnitSphere,
            views: ViewSpec::default_proj_views(),
            stall_patience: 0,
            stall_tol: 1e-4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.max_iters == 0 || self.n_coarse == 0 {
            return Err(Error::InvalidArgument("max_iters and n_coarse must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.stall_tol >= 0.0) {
            return Err(Error::InvalidArgument("stall_tol must be non-negative".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("adam_eps must be positive".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub rec: f64,
    pub silhouette: f64,
    pub proj: f64,
}

impl TraceRow {
    fn new(iter: usize, b: &LossBreakdown) -> Self {
        Self {
            iter,
            total: b.total,
            rec: b.rec,
            silhouette: b.silhouette,
            proj: b.proj,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitTrace {
    /// loss of the iterate at the start of each iteration
    pub rows: Vec<TraceRow>,
    /// lowest-loss iterate seen, including the one after the last update
    pub final_cloud: PointCloud,
    pub final_loss: TraceRow,
}

impl FitTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,total,rec,silhouette,proj\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.iter, r.total, r.rec, r.silhouette, r.proj));
        }
        s
    }
}

pub fn init_points(n: usize, mode: &InitMode, rng: &mut SeededRng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    match mode {
        InitMode::UnitSphere => {
            let mut pts = Vec::with_capacity(n);
            while pts.len() < n {
                let v = Vector3::new(rng.normal(), rng.normal(), rng.normal());
                let norm = v.norm();
                if norm > 1e-12 {
                    pts.push(Point3::from(v / norm));
                }
            }
            PointCloud::new(pts)
        }
        InitMode::UnitCube => PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)))
                .collect(),
        ),
        InitMode::FromCloud(c) => sample_fixed_n(c, n, rng),
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vector3<f64>>,
    v: Vec<Vector3<f64>>,
    t: i32,
}

impl Adam {
    fn new(cfg: &FitConfig, n: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![Vector3::zeros(); n],
            v: vec![Vector3::zeros(); n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [Point3<f64>], grad: &[Vector3<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in x.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g.component_mul(g);
            for d in 0..3 {
                let mhat = m[d] / bc1;
                let vhat = v[d] / bc2;
                p[d] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Minimises the weighted objective over free point coordinates with Adam.
///
/// `silhouette` is the ground-truth mask and its camera; when absent the
/// silhouette term is zero.
pub fn fit(target: &PointCloud, silhouette: Option<(&BinaryMask, &Camera)>, cfg: &FitConfig) -> Result<FitTrace> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let init = init_points(cfg.n_coarse, &cfg.init, &mut rng)?;
    fit_from(target, silhouette, cfg, init)
}

/// As [`fit`], starting from an explicit initial cloud.
pub fn fit_from(
    target: &PointCloud,
    silhouette: Option<(&BinaryMask, &Camera)>,
    cfg: &FitConfig,
    init: PointCloud,
) -> Result<FitTrace> {
    cfg.validate()?;
    if init.is_empty() {
        return Err(Error::Empty("initial point cloud"));
    }
    let objective = Objective::new(target, silhouette, &cfg.views, cfg.weights)?;
    let mut x = init.into_points();
    let mut adam = Adam::new(cfg, x.len());
    let mut rows = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(TraceRow, Vec<Point3<f64>>)> = None;
    let mut last_finite = x.clone();
    let mut stalled = 0usize;

    let record = |row: TraceRow, x: &[Point3<f64>], best: &mut Option<(TraceRow, Vec<Point3<f64>>)>| {
        if best.as_ref().map_or(true, |(b, _)| row.total < b.total) {
            *best = Some((row, x.to_vec()));
        }
    };

    for iter in 0..cfg.max_iters {
        let cloud = PointCloud::new(x.clone()).map_err(|_| Error::Diverged {
            iteration: iter,
            last_finite: Box::new(PointCloud::new(last_finite.clone()).unwrap_or_default()),
        })?;
        let b = objective.evaluate(&cloud, true)?;
        if !b.total.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                last_finite: Box::new(PointCloud::new(last_finite).unwrap_or_default()),
            });
        }
        last_finite.clone_from(&x);
        let row = TraceRow::new(iter, &b);
        rows.push(row);
        let prev_best = best.as_ref().map_or(f64::INFINITY, |(r, _)| r.total);
        record(row, &x, &mut best);
        if b.total == 0.0 {
            break;
        }
        if row.total < prev_best - cfg.stall_tol * prev_best {
            stalled = 0;
        } else {
            stalled += 1;
            if cfg.stall_patience > 0 && stalled >= cfg.stall_patience {
                break;
            }
        }
        adam.step(&mut x, b.grad.as_deref().unwrap());
    }

    if rows.last().map_or(false, |r| r.total > 0.0) {
        let iteration = rows.len();
        if let Ok(cloud) = PointCloud::new(x.clone()) {
            let b = objective.evaluate(&cloud, false)?;
            if b.total.is_finite() {
                record(TraceRow::new(iteration, &b), &x, &mut best);
            }
        } else {
            return Err(Error::Diverged {
                iteration,
                last_finite: Box::new(PointCloud::new(last_finite).unwrap_or_default()),
            });
        }
    }

    let (final_loss, pts) = best.expect("at least one iteration runs");
    Ok(FitTrace {
        rows,
        final_cloud: PointCloud::new(pts)?,
        final_loss,
    })
}

/// Orthonormal tangent pair for a unit normal: the coordinate axis least
/// aligned with the normal is projected onto the tangent plane.
pub fn tangent_frame(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let abs = normal.abs();
    let axis = if abs.x <= abs.y && abs.x <= abs.z {
        0
    } else if abs.y <= abs.z {
        1
    } else {
        2
    };
    let mut e = Vector3::zeros();
    e[axis] = 1.0;
    let t1 = (e - normal * normal.dot(&e)).normalize();
    let t2 = normal.cross(&t1);
    (t1, t2)
}

/// Replaces each coarse point by a zero-centred 2x2 grid of side `side`:
/// offsets `(±side/4, ±side/4)` in the point's tangent plane, or in the x-y
/// plane when no normals are given.
pub fn fold_upsample(coarse: &PointCloud, side: f64, normals: Option<&[Vector3<f64>]>) -> Result<PointCloud> {
    if !(side > 0.0) {
        return Err(Error::InvalidArgument("side must be positive".into()));
    }
    if let Some(n) = normals {
        if n.len() != coarse.len() {
            return Err(Error::SizeMismatch {
                left: coarse.len(),
                right: n.len(),
            });
        }
    }
    let h = side / 4.0;
    let mut out = Vec::with_capacity(coarse.len() * 4);
    for (i, p) in coarse.points().iter().enumerate() {
        let (t1, t2) = match normals {
            None => (Vector3::x(), Vector3::y()),
            Some(ns) => {
                let n = ns[i];
                let len = n.norm();
                if !(len > 1e-12) {
                    return Err(Error::InvalidArgument(format!("zero normal at point {i}")));
                }
                tangent_frame(&(n / len))
            }
        };
        for (a, b) in [(-h, -h), (h, -h), (-h, h), (h, h)] {
            out.push(p + t1 * a + t2 * b);
        }
    }
    PointCloud::new(out)
}
