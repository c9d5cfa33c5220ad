use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geom::{NnIndex, PointCloud};

/// Per-point unit normals from plane fitting on the `k` nearest neighbours
/// (the point itself included), consistently oriented by propagation along
/// a minimum spanning tree of the neighbourhood graph.
///
/// Each connected component is seeded at its point farthest from the cloud
/// centroid, whose normal is turned away from the centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Vector3<f64>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = cloud.len();
    if n < k + 1 {
        return Err(Error::InsufficientPoints { needed: k + 1, have: n });
    }
    let index = cloud.index();
    let pts = cloud.points();
    let mut neighbours = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for (i, p) in pts.iter().enumerate() {
        let nb = index.knn_sq(&[p.x, p.y, p.z], k + 1)?;
        let mean = nb.iter().fold(Vector3::zeros(), |a, &(j, _)| a + pts[j].coords) / nb.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &nb {
            let d = pts[j].coords - mean;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if !(max > 0.0) || mid <= 1e-12 * max {
            return Err(Error::Degenerate(format!(
                "neighbourhood of point {i} is collinear; tangent plane underdetermined"
            )));
        }
        normals.push(eig.eigenvectors.column(order[0]).normalize());
        neighbours.push(nb.into_iter().map(|(j, _)| j).filter(|&j| j != i).collect::<Vec<_>>());
    }
    orient(cloud, &neighbours, &mut normals);
    Ok(normals)
}

fn orient(cloud: &PointCloud, neighbours: &[Vec<usize>], normals: &mut [Vector3<f64>]) {
    let n = normals.len();
    // symmetric kNN graph
    let mut adj: Vec<Vec<usize>> = neighbours.to_vec();
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let centroid = cloud.centroid().unwrap();
    let pts = cloud.points();
    let mut by_distance: Vec<usize> = (0..n).collect();
    by_distance.sort_by(|&a, &b| {
        (pts[b] - centroid)
            .norm_squared()
            .total_cmp(&(pts[a] - centroid).norm_squared())
            .then(a.cmp(&b))
    });
    let mut visited = vec![false; n];
    for &seed in &by_distance {
        if visited[seed] {
            continue;
        }
        if normals[seed].dot(&(pts[seed] - centroid)) < 0.0 {
            normals[seed] = -normals[seed];
        }
        // Prim's algorithm; weights in [0, 1] so their bit patterns order correctly
        let mut heap = BinaryHeap::new();
        visited[seed] = true;
        let push = |heap: &mut BinaryHeap<_>, from: usize, normals: &[Vector3<f64>], visited: &[bool]| {
            for &to in &adj[from] {
                if !visited[to] {
                    let w = (1.0 - normals[from].dot(&normals[to]).abs()).max(0.0);
                    heap.push(Reverse((w.to_bits(), to, from)));
                }
            }
        };
        push(&mut heap, seed, normals, &visited);
        while let Some(Reverse((_, to, from))) = heap.pop() {
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[to].dot(&normals[from]) < 0.0 {
                normals[to] = -normals[to];
            }
            push(&mut heap, to, normals, &visited);
        }
    }
}

/// Mean distance from each point to its two closest other points.
pub fn estimate_scales(cloud: &PointCloud) -> Result<Vec<f64>> {
    let n = cloud.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, have: n });
    }
    let index: NnIndex = cloud.index();
    cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nb = index.knn_sq(&[p.x, p.y, p.z], 3)?;
            let others: Vec<f64> = nb.iter().filter(|&&(j, _)| j != i).take(2).map(|&(_, d2)| d2.sqrt()).collect();
            Ok((others[0] + others[1]) / 2.0)
        })
        .collect()
}
