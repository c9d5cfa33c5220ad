//! Shape and silhouette distance metrics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{dist2, BinaryMask, NnIndex, PointCloud};

/// Default size cap for [`emd_exact`].
pub const EMD_EXACT_CAP: usize = 256;

fn coords(c: &PointCloud) -> Vec<[f64; 3]> {
    c.points().iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
/// Per-point terms are summed sequentially in index order so the result
/// does not depend on the thread schedule.
pub(crate) fn mean_nn_sq(from: &[[f64; 3]], to: &NnIndex) -> f64 {
    let terms: Vec<f64> = from.par_iter().map(|q| to.nearest_sq(q).1).collect();
    terms.iter().sum::<f64>() / from.len() as f64
}

fn mean_nn(from: &[[f64; 3]], to: &NnIndex) -> f64 {
    let terms: Vec<f64> = from.par_iter().map(|q| to.nearest_sq(q).1.sqrt()).collect();
    terms.iter().sum::<f64>() / from.len() as f64
}

/// Bidirectional Chamfer distance with squared Euclidean norms.
pub fn chamfer(p: &PointCloud, phat: &PointCloud) -> Result<f64> {
    if p.is_empty() || phat.is_empty() {
        return Err(Error::Empty("chamfer input"));
    }
    let (a, b) = (coords(p), coords(phat));
    let (ia, ib) = (NnIndex::from_coords(a.clone()), NnIndex::from_coords(b.clone()));
    Ok(mean_nn_sq(&a, &ib) + mean_nn_sq(&b, &ia))
}

/// Chamfer variant with non-squared distances, for protocols that report it
/// that way.
pub fn chamfer_unsquared(p: &PointCloud, phat: &PointCloud) -> Result<f64> {
    if p.is_empty() || phat.is_empty() {
        return Err(Error::Empty("chamfer input"));
    }
    let (a, b) = (coords(p), coords(phat));
    let (ia, ib) = (NnIndex::from_coords(a.clone()), NnIndex::from_coords(b.clone()));
    Ok(mean_nn(&a, &ib) + mean_nn(&b, &ia))
}

fn check_pair(p: &PointCloud, phat: &PointCloud) -> Result<()> {
    if p.len() != phat.len() {
        return Err(Error::SizeMismatch {
            left: p.len(),
            right: phat.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::Empty("emd input"));
    }
    Ok(())
}

fn cost_matrix(p: &PointCloud, phat: &PointCloud) -> Vec<f64> {
    let (a, b) = (coords(p), coords(phat));
    let n = a.len();
    let mut c = vec![0.0; n * n];
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = dist2(&a[i], &b[j]).sqrt();
        }
    });
    c
}

/// Exact Earth Mover's Distance (mean matched Euclidean distance under the
/// optimal bijection), capped at [`EMD_EXACT_CAP`] points.
pub fn emd_exact(p: &PointCloud, phat: &PointCloud) -> Result<f64> {
    emd_exact_capped(p, phat, EMD_EXACT_CAP)
}

pub fn emd_exact_capped(p: &PointCloud, phat: &PointCloud, cap: usize) -> Result<f64> {
    check_pair(p, phat)?;
    if p.len() > cap {
        return Err(Error::TooLargeForExact { size: p.len(), cap });
    }
    let n = p.len();
    let cost = cost_matrix(p, phat);
    let assignment = hungarian(&cost, n);
    Ok(matched_mean(&cost, n, &assignment))
}

fn matched_mean(cost: &[f64], n: usize, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum::<f64>()
        / n as f64
}

/// Minimum-cost perfect assignment (Kuhn-Munkres with row/column
/// potentials, O(n^3)). Returns the column assigned to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based internally; column 0 is the virtual start
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Approximate EMD by forward auction with epsilon scaling.
///
/// The final bidding increment is `epsilon` times the largest pairwise cost,
/// which bounds the result to `[exact, exact + epsilon * diameter]`.
pub fn emd_approx(p: &PointCloud, phat: &PointCloud, epsilon: f64) -> Result<f64> {
    check_pair(p, phat)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let n = p.len();
    let cost = cost_matrix(p, phat);
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return Ok(0.0);
    }
    let assignment = auction(&cost, n, epsilon * max_cost);
    Ok(matched_mean(&cost, n, &assignment))
}

fn auction(cost: &[f64], n: usize, eps_final: f64) -> Vec<usize> {
    if n == 1 {
        return vec![0];
    }
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let mut prices = vec![0.0f64; n];
    let mut assigned = vec![usize::MAX; n];
    let mut owner = vec![usize::MAX; n];
    let mut eps = (max_cost / 4.0).max(eps_final);
    loop {
        assigned.iter_mut().for_each(|a| *a = usize::MAX);
        owner.iter_mut().for_each(|o| *o = usize::MAX);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best, mut best_val, mut second_val) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&c, &pj)) in row.iter().zip(&prices).enumerate() {
                let val = -c - pj;
                if val > best_val {
                    second_val = best_val;
                    best_val = val;
                    best = j;
                } else if val > second_val {
                    second_val = val;
                }
            }
            prices[best] += best_val - second_val + eps;
            let prev = owner[best];
            owner[best] = i;
            assigned[i] = best;
            if prev != usize::MAX {
                assigned[prev] = usize::MAX;
                queue.push_back(prev);
            }
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    assigned
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of a predicted complete silhouette, overall and restricted to the
/// visible and occluded parts of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUReport {
    pub full: f64,
    pub visible: f64,
    /// `None` when the ground truth has no occluded region.
    pub occluded: Option<f64>,
}

pub fn iou_report(pred_full: &BinaryMask, gt_full: &BinaryMask, gt_visible: &BinaryMask) -> Result<IoUReport> {
    pred_full.same_dims(gt_full)?;
    if !gt_visible.is_subset_of(gt_full)? {
        return Err(Error::InvalidArgument("visible mask is not a subset of the full mask".into()));
    }
    let occluded_region = gt_full.minus(gt_visible)?;
    let restricted = |region: &BinaryMask| -> Result<f64> {
        iou(&pred_full.and(region)?, &gt_full.and(region)?)
    };
    Ok(IoUReport {
        full: iou(pred_full, gt_full)?,
        visible: restricted(gt_visible)?,
        occluded: if occluded_region.is_empty() {
            None
        } else {
            Some(restricted(&occluded_region)?)
        },
    })
}
