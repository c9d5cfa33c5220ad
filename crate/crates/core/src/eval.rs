//! Rigid ICP alignment and the reconstruction evaluation protocols.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{check_rotation, normalize_unit, sample_fixed_n, PointCloud, SeededRng};
use crate::metrics::{chamfer, chamfer_unsquared, emd_approx};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpMode {
    /// Rotation and translation (SVD closed form).
    Full,
    /// Translation only (mean of matched offsets).
    TranslationOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// `target ≈ rotation · source + translation`.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Final mean squared nearest-neighbour distance.
    pub residual: f64,
    /// Residual before each update, followed by the final one.
    pub history: Vec<f64>,
}

pub const ICP_MAX_ITERS: usize = 100;
pub const ICP_TOL: f64 = 1e-9;

/// Iterative closest point from `source` towards `target`. Stops when the
/// mean squared residual improves by less than `tol` or after `max_iters`
/// updates.
pub fn icp(source: &PointCloud, target: &PointCloud, mode: IcpMode, max_iters: usize, tol: f64) -> Result<IcpResult> {
    let needed = if mode == IcpMode::Full { 3 } else { 1 };
    for c in [source, target] {
        if c.len() < needed {
            return Err(Error::InsufficientPoints { needed, have: c.len() });
        }
    }
    let index = target.index();
    let tpts = target.points();
    let mut rotation = Matrix3::identity();
    let mut translation = Vector3::zeros();
    let mut history = Vec::new();
    let matches = |r: &Matrix3<f64>, t: &Vector3<f64>| -> (Vec<Vector3<f64>>, Vec<usize>, f64) {
        let moved: Vec<Vector3<f64>> = source.points().iter().map(|p| r * p.coords + t).collect();
        let nn: Vec<(usize, f64)> = moved.par_iter().map(|p| index.nearest_sq(&[p.x, p.y, p.z])).collect();
        let residual = nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64;
        (moved, nn.into_iter().map(|(j, _)| j).collect(), residual)
    };
    let (mut moved, mut idx, mut residual) = matches(&rotation, &translation);
    for it in 0..max_iters {
        history.push(residual);
        if residual == 0.0 {
            break;
        }
        let n = moved.len() as f64;
        let (r_inc, t_inc) = match mode {
            IcpMode::TranslationOnly => {
                let shift = moved.iter().zip(&idx).fold(Vector3::zeros(), |a, (p, &j)| a + (tpts[j].coords - p)) / n;
                (Matrix3::identity(), shift)
            }
            IcpMode::Full => {
                let cs = moved.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
                let ct = idx.iter().fold(Vector3::zeros(), |a, &j| a + tpts[j].coords) / n;
                let mut h = Matrix3::zeros();
                for (p, &j) in moved.iter().zip(&idx) {
                    h += (p - cs) * (tpts[j].coords - ct).transpose();
                }
                let svd = h.svd(true, true);
                let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
                s.sort_by(|a, b| b.total_cmp(a));
                if !(s[1] > 1e-12 * s[0]) {
                    return Err(Error::Degenerate(format!("correspondence covariance has rank < 2 at ICP iteration {it}")));
                }
                let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
                let v = v_t.transpose();
                let d = (v * u.transpose()).determinant().signum();
                let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
                (r, ct - r * cs)
            }
        };
        let new_rotation = r_inc * rotation;
        let new_translation = r_inc * translation + t_inc;
        let (m2, i2, r2) = matches(&new_rotation, &new_translation);
        if r2 > residual {
            // rounding can only cost ulps here; keep the better transform
            break;
        }
        let improvement = residual - r2;
        rotation = new_rotation;
        translation = new_translation;
        moved = m2;
        idx = i2;
        residual = r2;
        if improvement < tol {
            break;
        }
    }
    history.push(residual);
    Ok(IcpResult { rotation, translation, residual, history })
}

/// How predictions and ground truth are brought into a common frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    /// Both clouds sampled to `n` points and compared as given.
    ViewerCentered { n: usize },
    /// Both sampled to `n`, normalised to unit extent, then rigidly aligned.
    ObjectCentered { n: usize },
    /// Ground truth rotated into the viewer frame, both normalised, then
    /// aligned by translation only.
    Pix3D { pre_rotation: Matrix3<f64> },
}

impl Protocol {
    pub fn viewer_centered() -> Self {
        Protocol::ViewerCentered { n: 2466 }
    }

    pub fn object_centered() -> Self {
        Protocol::ObjectCentered { n: 1024 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Protocol::ViewerCentered { n } | Protocol::ObjectCentered { n } if *n == 0 => {
                Err(Error::InvalidArgument("protocol sample count must be at least 1".into()))
            }
            Protocol::Pix3D { pre_rotation } => check_rotation(pre_rotation),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::ViewerCentered { .. } => "viewer-centered",
            Protocol::ObjectCentered { .. } => "object-centered",
            Protocol::Pix3D { .. } => "pix3d",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// Parses a protocol name with its default parameters (identity
    /// pre-rotation for Pix3D).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viewer-centered" | "viewer" => Ok(Protocol::viewer_centered()),
            "object-centered" | "object" => Ok(Protocol::object_centered()),
            "pix3d" => Ok(Protocol::Pix3D { pre_rotation: Matrix3::identity() }),
            other => Err(Error::InvalidArgument(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Metric and alignment settings shared by every protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    /// EMD tolerance relative to the larger cloud diameter.
    pub emd_epsilon: f64,
    /// Report the Chamfer distance with squared (`true`) or plain
    /// nearest-neighbour distances.
    pub squared_chamfer: bool,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { emd_epsilon: 1e-3, squared_chamfer: true, icp_max_iters: ICP_MAX_ITERS, icp_tol: ICP_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub sample_id: String,
    pub cd: f64,
    pub emd: f64,
    pub protocol: Protocol,
    /// Seed used for point sampling.
    pub seed: u64,
}

/// Scores `pred` against `gt` under `proto`. Both clouds are sampled with
/// the same seed, so identical inputs score exactly zero.
pub fn evaluate(pred: &PointCloud, gt: &PointCloud, proto: &Protocol, settings: &EvalSettings, rng: &mut SeededRng) -> Result<EvalRecord> {
    proto.validate()?;
    if pred.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let seed = rng.next_u64();
    let (p, g) = match proto {
        Protocol::ViewerCentered { n } => (
            sample_fixed_n(pred, *n, &mut SeededRng::new(seed))?,
            sample_fixed_n(gt, *n, &mut SeededRng::new(seed))?,
        ),
        Protocol::ObjectCentered { n } => {
            let p = normalize_unit(&sample_fixed_n(pred, *n, &mut SeededRng::new(seed))?)?.cloud;
            let g = normalize_unit(&sample_fixed_n(gt, *n, &mut SeededRng::new(seed))?)?.cloud;
            let fit = icp(&p, &g, IcpMode::Full, settings.icp_max_iters, settings.icp_tol)?;
            (p.transformed(&fit.rotation, &fit.translation), g)
        }
        Protocol::Pix3D { pre_rotation } => {
            let g = normalize_unit(&gt.transformed(pre_rotation, &Vector3::zeros()))?.cloud;
            let p = if pred.len() == g.len() { pred.clone() } else { sample_fixed_n(pred, g.len(), &mut SeededRng::new(seed))? };
            let p = normalize_unit(&p)?.cloud;
            let fit = icp(&p, &g, IcpMode::TranslationOnly, settings.icp_max_iters, settings.icp_tol)?;
            (p.transformed(&fit.rotation, &fit.translation), g)
        }
    };
    let cd = if settings.squared_chamfer { chamfer(&p, &g)? } else { chamfer_unsquared(&p, &g)? };
    let emd = emd_approx(&p, &g, settings.emd_epsilon)?;
    Ok(EvalRecord { sample_id: String::new(), cd, emd, protocol: proto.clone(), seed })
}

/// One prediction/ground-truth pair of a batch.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub pred: PointCloud,
    pub gt: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub records: Vec<EvalRecord>,
    /// Failed samples with their error messages; excluded from the means.
    pub failures: Vec<(String, String)>,
    pub mean_cd: f64,
    pub mean_emd: f64,
}

impl BatchReport {
    /// CSV with one row per sample and a closing `mean` row; metric values
    /// are multiplied by `scale`.
    pub fn to_csv(&self, scale: f64) -> String {
        let mut s = String::from("sample_id,cd,emd\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.sample_id, r.cd * scale, r.emd * scale);
        }
        for (id, msg) in &self.failures {
            let _ = writeln!(s, "# failed {id}: {msg}");
        }
        let _ = writeln!(s, "mean,{},{}", self.mean_cd * scale, self.mean_emd * scale);
        s
    }
}

/// Evaluates every pair in parallel; pair `i` samples with seed
/// `base_seed + i`. Records keep the input order.
pub fn evaluate_batch(pairs: &[EvalPair], proto: &Protocol, settings: &EvalSettings, base_seed: u64) -> Result<BatchReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    proto.validate()?;
    let base = SeededRng::new(base_seed);
    let results: Vec<Result<EvalRecord>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = base.derive(i as u64);
            evaluate(&pair.pred, &pair.gt, proto, settings, &mut rng).map(|mut r| {
                r.sample_id = pair.id.clone();
                r
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (pair, res) in pairs.iter().zip(results) {
        match res {
            Ok(r) => records.push(r),
            Err(e) => failures.push((pair.id.clone(), e.to_string())),
        }
    }
    let n = records.len() as f64;
    let (mean_cd, mean_emd) = if records.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (records.iter().map(|r| r.cd).sum::<f64>() / n, records.iter().map(|r| r.emd).sum::<f64>() / n)
    };
    Ok(BatchReport { records, failures, mean_cd, mean_emd })
}
