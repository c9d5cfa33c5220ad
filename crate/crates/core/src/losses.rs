//! The weighted training objective: 3D Chamfer reconstruction loss,
//! multi-view 2D reprojection loss and silhouette reprojection loss, with
//! analytic gradients with respect to the predicted points.
//!
//! Every `min` term resolves ties towards the lowest predicted-point index;
//! gradients follow that single assignment.

use nalgebra::{Matrix2x3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{BinaryMask, Camera, NnIndex, PointCloud};
use crate::projection::{mask_to_points, project, Point2, ViewSpec};

/// Gradient of a loss with respect to every predicted point.
pub type Gradient = Vec<Vector3<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_silhouette: f64,
    pub w_proj: f64,
}

impl LossWeights {
    pub fn new(w_rec: f64, w_silhouette: f64, w_proj: f64) -> Result<Self> {
        let w = Self {
            w_rec,
            w_silhouette,
            w_proj,
        };
        w.validate()?;
        Ok(w)
    }

    /// Weights used for the point-set decoder: (1, 1e-9, 1e-10).
    pub const fn standard() -> Self {
        Self {
            w_rec: 1.0,
            w_silhouette: 1e-9,
            w_proj: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.w_rec) && ok(self.w_silhouette) && ok(self.w_proj) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()))
        }
    }

    pub fn combine(&self, rec: f64, silhouette: f64, proj: f64) -> f64 {
        self.w_rec * rec + self.w_silhouette * silhouette + self.w_proj * proj
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Option<Gradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub silhouette: f64,
    pub proj: f64,
    pub grad: Option<Gradient>,
}

fn xyz(c: &PointCloud) -> Vec<[f64; 3]> {
    c.points().iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn add_scaled(acc: &mut Gradient, other: &Gradient, w: f64) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += w * b;
    }
}

/// Mean over `from` of the squared distance to its nearest point in `to`,
/// with the gradient pushed onto the matched `to` points. `to_index` indexes
/// `to` (3D coordinates, or 2D embedded at z = 0).
fn directed_sq(
    from: &[[f64; 3]],
    to: &[[f64; 3]],
    to_index: &NnIndex,
    grad: Option<&mut [[f64; 3]]>,
) -> f64 {
    let matches: Vec<(usize, f64)> = from.par_iter().map(|q| to_index.nearest_sq(q)).collect();
    let n = from.len() as f64;
    let value = matches.iter().map(|m| m.1).sum::<f64>() / n;
    if let Some(g) = grad {
        for (q, &(j, _)) in from.iter().zip(&matches) {
            for d in 0..3 {
                g[j][d] += 2.0 * (to[j][d] - q[d]) / n;
            }
        }
    }
    value
}

/// Reconstruction loss: bidirectional squared Chamfer distance.
pub fn loss_rec(p: &PointCloud, phat: &PointCloud, with_grad: bool) -> Result<LossValue> {
    if p.is_empty() || phat.is_empty() {
        return Err(Error::Empty("reconstruction loss input"));
    }
    RecTerm::new(p).eval(phat, with_grad)
}

struct RecTerm {
    gt: Vec<[f64; 3]>,
    gt_index: NnIndex,
}

impl RecTerm {
    fn new(p: &PointCloud) -> Self {
        let gt = xyz(p);
        Self {
            gt_index: NnIndex::from_coords(gt.clone()),
            gt,
        }
    }

    fn eval(&self, phat: &PointCloud, with_grad: bool) -> Result<LossValue> {
        let pred = xyz(phat);
        let pred_index = NnIndex::from_coords(pred.clone());
        let mut g = if with_grad { Some(vec![[0.0; 3]; pred.len()]) } else { None };
        // GT -> prediction: gradient lands on the matched predicted point
        let forward = directed_sq(&self.gt, &pred, &pred_index, g.as_deref_mut());
        // prediction -> GT: gradient 2(p̂ - p*)/|P̂| on each predicted point
        let matches: Vec<(usize, f64)> = pred.par_iter().map(|q| self.gt_index.nearest_sq(q)).collect();
        let m = pred.len() as f64;
        let backward = matches.iter().map(|x| x.1).sum::<f64>() / m;
        if let Some(g) = g.as_mut() {
            for (k, &(j, _)) in matches.iter().enumerate() {
                for d in 0..3 {
                    g[k][d] += 2.0 * (pred[k][d] - self.gt[j][d]) / m;
                }
            }
        }
        Ok(LossValue {
            value: forward + backward,
            grad: g.map(to_vectors),
        })
    }
}

fn to_vectors(g: Vec<[f64; 3]>) -> Gradient {
    g.into_iter().map(Vector3::from).collect()
}

/// Unidirectional 2D Chamfer from fixed targets to projected predictions,
/// chaining the gradient through the per-point projection Jacobians.
fn reprojection_term(
    targets: &[[f64; 3]],
    phat: &PointCloud,
    view: &ViewSpec,
    grad: Option<&mut Gradient>,
) -> Result<f64> {
    let projected: Vec<(Point2, Matrix2x3<f64>)> = phat
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| view.project_with_jacobian(p, i))
        .collect::<Result<_>>()?;
    let pred2: Vec<[f64; 3]> = projected.iter().map(|(uv, _)| [uv[0], uv[1], 0.0]).collect();
    let index = NnIndex::from_coords(pred2.clone());
    match grad {
        None => Ok(directed_sq(targets, &pred2, &index, None)),
        Some(g) => {
            let mut g2 = vec![[0.0; 3]; pred2.len()];
            let value = directed_sq(targets, &pred2, &index, Some(&mut g2));
            for (k, (_, jac)) in projected.iter().enumerate() {
                let duv = nalgebra::Vector2::new(g2[k][0], g2[k][1]);
                g[k] += jac.transpose() * duv;
            }
            Ok(value)
        }
    }
}

fn embed(points: &[Point2]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p[0], p[1], 0.0]).collect()
}

/// Multi-view reprojection loss summed over `views`.
pub fn loss_proj(p: &PointCloud, phat: &PointCloud, views: &[ViewSpec], with_grad: bool) -> Result<LossValue> {
    if p.is_empty() || phat.is_empty() {
        return Err(Error::Empty("reprojection loss input"));
    }
    if views.is_empty() {
        return Err(Error::InvalidArgument("at least one view is required".into()));
    }
    ProjTerm::new(p, views)?.eval(phat, with_grad)
}

struct ProjTerm {
    views: Vec<(ViewSpec, Vec<[f64; 3]>)>,
}

impl ProjTerm {
    fn new(p: &PointCloud, views: &[ViewSpec]) -> Result<Self> {
        let views = views
            .iter()
            .map(|v| Ok((v.clone(), embed(&project(p, v)?.points))))
            .collect::<Result<_>>()?;
        Ok(Self { views })
    }

    fn eval(&self, phat: &PointCloud, with_grad: bool) -> Result<LossValue> {
        let mut grad = if with_grad { Some(vec![Vector3::zeros(); phat.len()]) } else { None };
        let mut value = 0.0;
        for (view, targets) in &self.views {
            value += reprojection_term(targets, phat, view, grad.as_mut())?;
        }
        Ok(LossValue { value, grad })
    }
}

/// Silhouette loss: mask pixel centres to the nearest perspective projection
/// of the prediction.
pub fn loss_silhouette(mask: &BinaryMask, phat: &PointCloud, cam: &Camera, with_grad: bool) -> Result<LossValue> {
    SilhouetteTerm::new(mask, cam)?.eval(phat, with_grad)
}

struct SilhouetteTerm {
    view: ViewSpec,
    targets: Vec<[f64; 3]>,
}

impl SilhouetteTerm {
    fn new(mask: &BinaryMask, cam: &Camera) -> Result<Self> {
        let targets = embed(&mask_to_points(mask).points);
        if targets.is_empty() {
            return Err(Error::Empty("silhouette mask"));
        }
        Ok(Self {
            view: ViewSpec::Perspective(cam.clone()),
            targets,
        })
    }

    fn eval(&self, phat: &PointCloud, with_grad: bool) -> Result<LossValue> {
        if phat.is_empty() {
            return Err(Error::Empty("predicted point cloud"));
        }
        let mut grad = if with_grad { Some(vec![Vector3::zeros(); phat.len()]) } else { None };
        let value = reprojection_term(&self.targets, phat, &self.view, grad.as_mut())?;
        Ok(LossValue { value, grad })
    }
}

/// The full objective with its ground-truth side precomputed, so repeated
/// evaluation (as in fitting) only rebuilds the prediction-side indices.
pub struct Objective {
    rec: RecTerm,
    silhouette: Option<SilhouetteTerm>,
    proj: Option<ProjTerm>,
    weights: LossWeights,
}

impl Objective {
    /// `silhouette` is the ground-truth mask with its camera; without it the
    /// silhouette term is reported as 0. An empty `views` list disables the
    /// reprojection term the same way.
    pub fn new(
        target: &PointCloud,
        silhouette: Option<(&BinaryMask, &Camera)>,
        views: &[ViewSpec],
        weights: LossWeights,
    ) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Empty("target point cloud"));
        }
        weights.validate()?;
        Ok(Self {
            rec: RecTerm::new(target),
            silhouette: silhouette.map(|(m, c)| SilhouetteTerm::new(m, c)).transpose()?,
            proj: if views.is_empty() { None } else { Some(ProjTerm::new(target, views)?) },
            weights,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn evaluate(&self, phat: &PointCloud, with_grad: bool) -> Result<LossBreakdown> {
        if phat.is_empty() {
            return Err(Error::Empty("predicted point cloud"));
        }
        let w = self.weights;
        let rec = self.rec.eval(phat, with_grad)?;
        let sil = match &self.silhouette {
            Some(t) => Some(t.eval(phat, with_grad)?),
            None => None,
        };
        let proj = match &self.proj {
            Some(t) => Some(t.eval(phat, with_grad)?),
            None => None,
        };
        let sil_v = sil.as_ref().map_or(0.0, |s| s.value);
        let proj_v = proj.as_ref().map_or(0.0, |s| s.value);
        let grad = if with_grad {
            let mut g = vec![Vector3::zeros(); phat.len()];
            add_scaled(&mut g, rec.grad.as_ref().unwrap(), w.w_rec);
            if let Some(s) = &sil {
                add_scaled(&mut g, s.grad.as_ref().unwrap(), w.w_silhouette);
            }
            if let Some(s) = &proj {
                add_scaled(&mut g, s.grad.as_ref().unwrap(), w.w_proj);
            }
            Some(g)
        } else {
            None
        };
        Ok(LossBreakdown {
            total: w.combine(rec.value, sil_v, proj_v),
            rec: rec.value,
            silhouette: sil_v,
            proj: proj_v,
            grad,
        })
    }
}

/// One-shot evaluation of the weighted objective.
pub fn loss_total(
    p: &PointCloud,
    phat: &PointCloud,
    silhouette: Option<(&BinaryMask, &Camera)>,
    views: &[ViewSpec],
    weights: LossWeights,
    with_grad: bool,
) -> Result<LossBreakdown> {
    Objective::new(p, silhouette, views, weights)?.evaluate(phat, with_grad)
}
