use std::collections::BTreeSet;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::{dist2, NnIndex, PointCloud, SeededRng, TriangleMesh};

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut SeededRng) -> Result<Vec<Point3<f64>>> {
    mesh.validate()?;
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero total area".into()));
    }
    Ok((0..n)
        .map(|_| {
            let u = rng.uniform(0.0, total);
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
            let r1 = rng.uniform(0.0, 1.0).sqrt();
            let r2 = rng.uniform(0.0, 1.0);
            Point3::from(a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2))
        })
        .collect())
}

/// Blue-noise resampling by sample elimination.
///
/// Draws `4n` area-weighted candidates, then repeatedly removes the
/// candidate whose nearest surviving neighbour is closest until `n` remain.
/// Returns the survivors (in candidate order) and their minimum pairwise
/// distance, which is infinite for a single point.
pub fn poisson_disc_resample(mesh: &TriangleMesh, n: usize, rng: &mut SeededRng) -> Result<(PointCloud, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("resample count must be at least 1".into()));
    }
    let candidates = sample_surface(mesh, 4 * n, rng)?;
    let coords: Vec<[f64; 3]> = candidates.iter().map(|p| [p.x, p.y, p.z]).collect();
    let index = NnIndex::from_coords(coords.clone());
    let m = coords.len();
    let mut alive = vec![true; m];
    let mut n_alive = m;

    // nearest alive neighbour of i, ties to the lower index
    let nearest_alive = |i: usize, alive: &[bool], n_alive: usize| -> (usize, f64) {
        let mut k = 8usize;
        loop {
            let k_eff = k.min(m);
            let found = index
                .knn_sq(&coords[i], k_eff)
                .expect("k within index size")
                .into_iter()
                .find(|&(j, _)| j != i && alive[j]);
            if let Some(hit) = found {
                return hit;
            }
            if k_eff == m || k > 4 * (m - n_alive + 8) {
                // scan everything once the neighbourhood is mostly eliminated
                return (0..m)
                    .filter(|&j| j != i && alive[j])
                    .map(|j| (j, dist2(&coords[i], &coords[j])))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .expect("at least two candidates remain");
            }
            k *= 2;
        }
    };

    let mut nn: Vec<(usize, f64)> = (0..m).map(|i| nearest_alive(i, &alive, n_alive)).collect();
    let mut watchers: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &(j, _)) in nn.iter().enumerate() {
        watchers[j].push(i);
    }
    let mut queue: BTreeSet<(u64, usize)> = nn.iter().enumerate().map(|(i, &(_, d))| (d.to_bits(), i)).collect();
    while n_alive > n {
        let (_, victim) = queue.pop_first().expect("queue holds every survivor");
        alive[victim] = false;
        n_alive -= 1;
        if n_alive == 1 {
            break;
        }
        for w in std::mem::take(&mut watchers[victim]) {
            if !alive[w] || nn[w].0 != victim {
                continue;
            }
            queue.remove(&(nn[w].1.to_bits(), w));
            nn[w] = nearest_alive(w, &alive, n_alive);
            watchers[nn[w].0].push(w);
            queue.insert((nn[w].1.to_bits(), w));
        }
    }
    let radius = if n_alive == 1 {
        f64::INFINITY
    } else {
        queue.first().map(|&(bits, _)| f64::from_bits(bits).sqrt()).unwrap()
    };
    let points = candidates.into_iter().zip(alive).filter(|(_, a)| *a).map(|(p, _)| p).collect();
    Ok((PointCloud::new(points)?, radius))
}
