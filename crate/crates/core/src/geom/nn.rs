use nalgebra::Point3;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Exact k-d tree over a fixed set of 3D points.
///
/// Neighbours are ordered by `(squared distance, point index)`, so ties are
/// always resolved towards the lowest index.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl NnIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    /// Index over 2D points, embedded at z = 0.
    pub fn from_2d(points: &[[f64; 2]]) -> Self {
        Self::from_coords(points.iter().map(|p| [p[0], p[1], 0.0]).collect())
    }

    pub fn from_coords(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    /// The `k` nearest points as `(index, euclidean distance)`, ascending.
    pub fn knn(&self, q: &Point3<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
        Ok(self
            .knn_sq(&[q.x, q.y, q.z], k)?
            .into_iter()
            .map(|(i, d2)| (i, d2.sqrt()))
            .collect())
    }

    /// The `k` nearest points as `(index, squared distance)`, ascending.
    pub fn knn_sq(&self, q: &[f64; 3], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if k > self.points.len() {
            return Err(Error::InsufficientPoints {
                needed: k,
                have: self.points.len(),
            });
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        Ok(best.into_iter().map(|(d2, i)| (i, d2)).collect())
    }

    /// Single nearest neighbour as `(index, squared distance)`.
    ///
    /// Panics on an empty index.
    pub fn nearest_sq(&self, q: &[f64; 3]) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest query on empty index");
        let mut best = (f64::INFINITY, usize::MAX);
        self.search_one(0, q, &mut best);
        (best.1, best.0)
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (dist2(&self.points[i], q), i);
                    if best.len() == k && !before(cand, best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|&b| before(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }

    fn search_one(&self, node: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (dist2(&self.points[i], q), i);
                    if before(cand, *best) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_one(near, q, best);
                if diff * diff <= best.0 {
                    self.search_one(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(points[i][d]);
            hi[d] = hi[d].max(points[i][d]);
        }
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    if hi[dim] - lo[dim] == 0.0 {
        // all points coincide
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
    });
    let value = points[order[mid]][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim,
        value,
        left,
        right,
    };
    id
}
