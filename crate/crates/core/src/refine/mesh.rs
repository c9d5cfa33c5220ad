use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::surface::compact;
use crate::error::{Error, Result};
use crate::geom::TriangleMesh;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // the smaller root wins, keeping labels order-independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b { (a, b) } else { (b, a) }
}

/// Removes connected components (faces joined through shared edges) with
/// fewer than `min_component_faces` faces, then drops unreferenced vertices.
/// Surviving faces and vertices keep their relative order.
pub fn clean_mesh(mesh: &TriangleMesh, min_component_faces: usize) -> TriangleMesh {
    let nf = mesh.faces.len();
    let mut uf = UnionFind::new(nf);
    let mut first_face: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for e in 0..3 {
            let key = edge_key(f[e], f[(e + 1) % 3]);
            match first_face.get(&key) {
                Some(&other) => uf.union(fi, other),
                None => {
                    first_face.insert(key, fi);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..nf).map(|f| uf.find(f)).collect();
    let mut sizes = vec![0usize; nf];
    for &r in &roots {
        sizes[r] += 1;
    }
    let faces = mesh
        .faces
        .iter()
        .zip(&roots)
        .filter(|&(_, &r)| sizes[r] >= min_component_faces)
        .map(|(f, _)| *f)
        .collect();
    compact(mesh.vertices.clone(), faces)
}

/// Symmetric sparse matrix in compressed rows, diagonal stored separately.
struct Sparse {
    diag: Vec<f64>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Sparse {
    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.diag.len() {
            let mut s = self.diag[i] * x[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            out[i] = s;
        }
    }
}

/// Jacobi-preconditioned conjugate gradients, warm-started from `x`.
fn conjugate_gradient(a: &Sparse, b: &[f64], x: &mut [f64]) {
    let n = b.len();
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * b_norm;
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..(10 * n).max(100) {
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol {
            break;
        }
        a.mul(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

fn cot(u: Vector3<f64>, v: Vector3<f64>, face: usize) -> Result<f64> {
    let c = u.cross(&v).norm();
    let value = u.dot(&v) / c;
    if c == 0.0 || !value.is_finite() {
        return Err(Error::DegenerateFace(face));
    }
    Ok(value)
}

/// Edges with exactly one incident face; rejects edges shared by three or
/// more faces.
fn edge_faces(mesh: &TriangleMesh) -> Result<HashMap<(usize, usize), usize>> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &mesh.faces {
        for e in 0..3 {
            let key = edge_key(f[e], f[(e + 1) % 3]);
            let c = count.entry(key).or_insert(0);
            *c += 1;
            if *c > 2 {
                return Err(Error::NonManifold(key.0, key.1));
            }
        }
    }
    Ok(count)
}

/// Implicit (backward-Euler) mean-curvature flow with the cotangent
/// Laplacian.
///
/// Each step solves `(M + step·h̄²·L) V' = M V`, where `M` is the lumped
/// vertex area, `L` the cotangent stiffness matrix rebuilt from the current
/// vertices and `h̄` the mean edge length of the input mesh, so `step` is
/// dimensionless. Boundary vertices stay fixed. Connectivity is unchanged.
pub fn smooth_curvature_flow(mesh: &TriangleMesh, iters: usize, step: f64) -> Result<TriangleMesh> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing step must be non-negative, got {step}")));
    }
    mesh.validate()?;
    let counts = edge_faces(mesh)?;
    let nv = mesh.vertices.len();
    let mut fixed = vec![false; nv];
    for (&(a, b), &c) in &counts {
        if c == 1 {
            fixed[a] = true;
            fixed[b] = true;
        }
    }
    let mut referenced = vec![false; nv];
    for f in &mesh.faces {
        for &v in f {
            referenced[v] = true;
        }
    }
    for v in 0..nv {
        if !referenced[v] {
            fixed[v] = true;
        }
    }
    let mean_edge2 = if counts.is_empty() {
        0.0
    } else {
        let mut edges: Vec<_> = counts.keys().copied().collect();
        edges.sort_unstable();
        let sum: f64 = edges.iter().map(|&(a, b)| (mesh.vertices[a] - mesh.vertices[b]).norm()).sum();
        let mean = sum / counts.len() as f64;
        mean * mean
    };
    let tau = step * mean_edge2;

    // free vertices are renumbered densely for the solve
    let mut slot = vec![usize::MAX; nv];
    let mut free = Vec::new();
    for v in 0..nv {
        if !fixed[v] {
            slot[v] = free.len();
            free.push(v);
        }
    }

    let mut verts = mesh.vertices.clone();
    for _ in 0..iters {
        let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
        let mut mass = vec![0.0; nv];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let p = [verts[f[0]], verts[f[1]], verts[f[2]]];
            let area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm() / 2.0;
            for c in 0..3 {
                let (i, j) = (f[c], f[(c + 1) % 3]);
                let (pi, pj, pk) = (p[c], p[(c + 1) % 3], p[(c + 2) % 3]);
                // the angle at k faces edge (i, j)
                let w = cot(pi - pk, pj - pk, fi)? / 2.0;
                *weights.entry(edge_key(i, j)).or_insert(0.0) += w;
                mass[i] += area / 3.0;
            }
        }
        let n = free.len();
        if n == 0 {
            break;
        }
        let mut diag: Vec<f64> = free.iter().map(|&v| mass[v]).collect();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs: Vec<[f64; 3]> = free.iter().map(|&v| (verts[v].coords * mass[v]).into()).collect();
        let mut keys: Vec<_> = weights.into_iter().collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        for ((a, b), w) in keys {
            for (u, v) in [(a, b), (b, a)] {
                if fixed[u] {
                    continue;
                }
                let su = slot[u];
                diag[su] += tau * w;
                if fixed[v] {
                    for d in 0..3 {
                        rhs[su][d] += tau * w * verts[v][d];
                    }
                } else {
                    rows[su].push((slot[v], -tau * w));
                }
            }
        }
        let mut row_start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in rows {
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_start.push(cols.len());
        }
        if diag.iter().any(|d| !(*d > 0.0)) {
            let v = free[diag.iter().position(|d| !(*d > 0.0)).unwrap()];
            let face = mesh.faces.iter().position(|f| f.contains(&v)).unwrap_or(0);
            return Err(Error::DegenerateFace(face));
        }
        let a = Sparse { diag, row_start, cols, vals };
        let mut next = verts.clone();
        for d in 0..3 {
            let b: Vec<f64> = rhs.iter().map(|r| r[d]).collect();
            let mut x: Vec<f64> = free.iter().map(|&v| verts[v][d]).collect();
            conjugate_gradient(&a, &b, &mut x);
            for (k, &v) in free.iter().enumerate() {
                next[v][d] = x[k];
            }
        }
        if next.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Degenerate("curvature flow produced non-finite vertices".into()));
        }
        verts = next;
    }
    Ok(TriangleMesh { vertices: verts, faces: mesh.faces.clone() })
}

/// Icosahedron subdivided `levels` times and projected onto the unit sphere,
/// with outward-facing triangles.
pub fn icosphere(levels: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Point3::from(Vector3::from(*c).normalize()))
    .collect();
    let mut faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>| {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                let m = (vertices[a].coords + vertices[b].coords).normalize();
                vertices.push(Point3::from(m));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh { vertices, faces }
}
