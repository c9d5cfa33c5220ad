use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{OrientedCloud, RefineConfig};
use crate::error::{Error, Result};
use crate::geom::TriangleMesh;

/// Compactly supported Wendland C2 weight with support radius `r_max`.
fn wendland(r: f64, r_max: f64) -> f64 {
    if r >= r_max {
        return 0.0;
    }
    let q = r / r_max;
    let a = 1.0 - q;
    a * a * a * a * (4.0 * q + 1.0)
}

/// Regular sampling of the implicit field. Nodes that no sample supports
/// carry `None`.
pub(crate) struct FieldGrid {
    pub origin: Point3<f64>,
    pub h: f64,
    pub dims: [usize; 3],
    pub values: Vec<Option<f64>>,
}

impl FieldGrid {
    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    fn position(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.h
    }
}

/// Samples F(x) = Σ wᵢ(x) nᵢ·(x − pᵢ) / Σ wᵢ(x) over the padded bounding box.
pub(crate) fn sample_field(oc: &OrientedCloud, cfg: &RefineConfig) -> Result<FieldGrid> {
    let pts = oc.points.points();
    let radii: Vec<f64> = oc.scales.iter().map(|s| s * cfg.support_radius_factor).collect();
    let pad = radii.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = oc.points.bounds().ok_or(Error::Empty("point cloud"))?;
    let extent = hi - lo;
    if extent.max() <= 0.0 {
        return Err(Error::Degenerate("bounding box has zero extent".into()));
    }
    let padded = extent.add_scalar(2.0 * pad);
    let res = cfg.grid_resolution.max(2);
    let h = padded.max() / (res - 1) as f64;
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((padded[a] / h - 1e-9).ceil() as usize + 1).clamp(2, res);
    }
    let centre = nalgebra::center(&lo, &hi);
    let half = Vector3::new(dims[0] - 1, dims[1] - 1, dims[2] - 1).cast::<f64>() * (h / 2.0);
    let origin = centre - half;

    // Bucket samples by the z-slices they can touch so each slice is filled
    // independently, always in sample order.
    let slice_range = |i: usize| {
        let z0 = ((pts[i].z - radii[i] - origin.z) / h).ceil().max(0.0) as usize;
        let z1 = (((pts[i].z + radii[i] - origin.z) / h).floor().max(-1.0) + 1.0) as usize;
        (z0.min(dims[2]), z1.min(dims[2]))
    };
    let mut per_slice: Vec<Vec<usize>> = vec![Vec::new(); dims[2]];
    for i in 0..pts.len() {
        let (z0, z1) = slice_range(i);
        for s in per_slice.iter_mut().take(z1).skip(z0) {
            s.push(i);
        }
    }

    let slice_len = dims[0] * dims[1];
    let mut values = vec![None; slice_len * dims[2]];
    values
        .par_chunks_mut(slice_len)
        .zip(per_slice.par_iter())
        .enumerate()
        .for_each(|(k, (slice, members))| {
            let z = origin.z + k as f64 * h;
            let mut wsum = vec![0.0; slice_len];
            let mut fsum = vec![0.0; slice_len];
            for &i in members {
                let (p, n, r) = (&pts[i], &oc.normals[i], radii[i]);
                let dz = z - p.z;
                let rr = r * r - dz * dz;
                if rr <= 0.0 {
                    continue;
                }
                let disc = rr.sqrt();
                let x0 = ((p.x - disc - origin.x) / h).ceil().max(0.0) as usize;
                let x1 = (((p.x + disc - origin.x) / h).floor() as isize).min(dims[0] as isize - 1);
                let y0 = ((p.y - disc - origin.y) / h).ceil().max(0.0) as usize;
                let y1 = (((p.y + disc - origin.y) / h).floor() as isize).min(dims[1] as isize - 1);
                if x1 < 0 || y1 < 0 {
                    continue;
                }
                for jy in y0..=y1 as usize {
                    let y = origin.y + jy as f64 * h;
                    for ix in x0..=x1 as usize {
                        let x = origin.x + ix as f64 * h;
                        let d = Vector3::new(x - p.x, y - p.y, dz);
                        let w = wendland(d.norm(), r);
                        if w > 0.0 {
                            let idx = jy * dims[0] + ix;
                            wsum[idx] += w;
                            fsum[idx] += w * n.dot(&d);
                        }
                    }
                }
            }
            for (out, (w, f)) in slice.iter_mut().zip(wsum.iter().zip(&fsum)) {
                if *w > 0.0 {
                    *out = Some(f / w);
                }
            }
        });
    Ok(FieldGrid { origin, h, dims, values })
}

/// Corner `c` of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
const CORNER_OFFSETS: [[usize; 3]; 8] = {
    let mut out = [[0; 3]; 8];
    let mut c = 0;
    while c < 8 {
        out[c] = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
        c += 1;
    }
    out
};

/// Faces as corner cycles, each listed counter-clockwise seen from outside
/// the cell, with the outward normal.
const FACES: [([usize; 4], [i8; 3]); 6] = [
    ([0, 4, 6, 2], [-1, 0, 0]),
    ([1, 3, 7, 5], [1, 0, 0]),
    ([0, 1, 5, 4], [0, -1, 0]),
    ([2, 6, 7, 3], [0, 1, 0]),
    ([0, 2, 3, 1], [0, 0, -1]),
    ([4, 5, 7, 6], [0, 0, 1]),
];

/// Cell edges are identified by their sorted corner pair.
fn edge_id(a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    a * 8 + b
}

/// One cell's contribution: closed loops of crossed cell edges, each loop
/// wound so that the negative (inside) region lies on a fixed side.
fn cell_loops(v: &[f64; 8]) -> Vec<Vec<(usize, usize)>> {
    let neg = |c: usize| v[c] < 0.0;
    let mut next: [Option<(usize, usize)>; 64] = [None; 64];
    let mut starts = Vec::new();
    for (corners, normal) in FACES.iter() {
        let nrm = Vector3::new(normal[0] as f64, normal[1] as f64, normal[2] as f64);
        // crossing edges of this face, in cycle order; edge m joins m and m+1
        let crossed: Vec<usize> = (0..4).filter(|&m| neg(corners[m]) != neg(corners[(m + 1) % 4])).collect();
        let mut segments: Vec<(usize, usize)> = Vec::new();
        match crossed.len() {
            0 => {}
            2 => segments.push((crossed[0], crossed[1])),
            4 => {
                let [a, b, d, c] = [v[corners[0]], v[corners[1]], v[corners[2]], v[corners[3]]];
                // bilinear saddle value decides which diagonal pair stays joined
                let saddle = (a * d - b * c) / (a + d - b - c);
                let isolate_negative = saddle >= 0.0;
                let cut_first = neg(corners[0]) == isolate_negative;
                if cut_first {
                    // isolate corners 0 and 2
                    segments.push((3, 0));
                    segments.push((1, 2));
                } else {
                    // isolate corners 1 and 3
                    segments.push((0, 1));
                    segments.push((2, 3));
                }
            }
            _ => unreachable!("a cycle always has an even number of sign changes"),
        }
        for (m0, m1) in segments {
            let ea = (corners[m0], corners[(m0 + 1) % 4]);
            let eb = (corners[m1], corners[(m1 + 1) % 4]);
            // reference corner: the one shared by both edges when they are
            // adjacent, otherwise any corner of the face
            let x = if (m0 + 1) % 4 == m1 {
                corners[m1]
            } else if (m1 + 1) % 4 == m0 {
                corners[m0]
            } else {
                corners[0]
            };
            let pos = |c: usize| Vector3::new(CORNER_OFFSETS[c][0] as f64, CORNER_OFFSETS[c][1] as f64, CORNER_OFFSETS[c][2] as f64);
            let mid = |e: (usize, usize)| (pos(e.0) + pos(e.1)) / 2.0;
            let (pa, pb) = (mid(ea), mid(eb));
            let side = (pb - pa).cross(&(pos(x) - pa)).dot(&nrm);
            let (from, to) = if (side < 0.0) == neg(x) { (ea, eb) } else { (eb, ea) };
            let key = edge_id(from.0, from.1);
            debug_assert!(next[key].is_none());
            next[key] = Some(to);
            starts.push(from);
        }
    }
    let mut used = [false; 64];
    let mut loops = Vec::new();
    for s in starts {
        if used[edge_id(s.0, s.1)] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = s;
        while !used[edge_id(e.0, e.1)] {
            used[edge_id(e.0, e.1)] = true;
            lp.push(e);
            e = next[edge_id(e.0, e.1)].expect("crossing loops close on the cell boundary");
        }
        loops.push(lp);
    }
    loops
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Edge(usize, usize),
    Local(usize),
}

struct Layer {
    vertices: Vec<(VertexKey, Point3<f64>)>,
    triangles: Vec<[usize; 3]>,
}

/// Extracts the zero level set of the grid; cells touching unsupported
/// nodes are skipped.
pub(crate) fn extract_isosurface(grid: &FieldGrid) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let layers: Vec<Layer> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut layer = Layer { vertices: Vec::new(), triangles: Vec::new() };
            let mut lookup: HashMap<VertexKey, usize> = HashMap::new();
            let mut local = 0usize;
            for j in 0..ny - 1 {
                'cell: for i in 0..nx - 1 {
                    let mut v = [0.0; 8];
                    let mut ids = [0usize; 8];
                    for c in 0..8 {
                        let [dx, dy, dz] = CORNER_OFFSETS[c];
                        ids[c] = grid.node(i + dx, j + dy, k + dz);
                        match grid.values[ids[c]] {
                            Some(f) => v[c] = f,
                            None => continue 'cell,
                        }
                    }
                    let n_neg = v.iter().filter(|&&f| f < 0.0).count();
                    if n_neg == 0 || n_neg == 8 {
                        continue;
                    }
                    for lp in cell_loops(&v) {
                        let mut poly = Vec::with_capacity(lp.len());
                        for (a, b) in lp {
                            let (ga, gb) = (ids[a], ids[b]);
                            let key = VertexKey::Edge(ga.min(gb), ga.max(gb));
                            let idx = *lookup.entry(key).or_insert_with(|| {
                                let t = (v[a] / (v[a] - v[b])).clamp(1e-3, 1.0 - 1e-3);
                                let [ax, ay, az] = CORNER_OFFSETS[a];
                                let [bx, by, bz] = CORNER_OFFSETS[b];
                                let pa = grid.position(i + ax, j + ay, k + az);
                                let pb = grid.position(i + bx, j + by, k + bz);
                                layer.vertices.push((key, pa + (pb - pa) * t));
                                layer.vertices.len() - 1
                            });
                            poly.push(idx);
                        }
                        triangulate(&poly, &mut layer, &mut local);
                    }
                }
            }
            layer
        })
        .collect();

    let mut global: HashMap<VertexKey, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (li, layer) in layers.into_iter().enumerate() {
        let map: Vec<usize> = layer
            .vertices
            .iter()
            .map(|&(key, p)| {
                let key = match key {
                    VertexKey::Local(n) => VertexKey::Local(n * (nz + 1) + li),
                    e => e,
                };
                *global.entry(key).or_insert_with(|| {
                    vertices.push(p);
                    vertices.len() - 1
                })
            })
            .collect();
        for t in layer.triangles {
            let f = [map[t[0]], map[t[1]], map[t[2]]];
            let area2 = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]])).norm();
            if area2 > 1e-14 * grid.h * grid.h {
                faces.push(f);
            }
        }
    }
    compact(vertices, faces)
}

fn triangulate(poly: &[usize], layer: &mut Layer, local: &mut usize) {
    let p = |i: usize| layer.vertices[poly[i]].1;
    match poly.len() {
        3 => layer.triangles.push([poly[0], poly[1], poly[2]]),
        4 => {
            if (p(0) - p(2)).norm_squared() <= (p(1) - p(3)).norm_squared() {
                layer.triangles.push([poly[0], poly[1], poly[2]]);
                layer.triangles.push([poly[0], poly[2], poly[3]]);
            } else {
                layer.triangles.push([poly[0], poly[1], poly[3]]);
                layer.triangles.push([poly[1], poly[2], poly[3]]);
            }
        }
        n => {
            let c = (0..n).fold(Vector3::zeros(), |a, i| a + p(i).coords) / n as f64;
            layer.vertices.push((VertexKey::Local(*local), Point3::from(c)));
            *local += 1;
            let ci = layer.vertices.len() - 1;
            for i in 0..n {
                layer.triangles.push([poly[i], poly[(i + 1) % n], ci]);
            }
        }
    }
}

/// Drops unreferenced vertices, keeping the survivors' relative order.
pub(crate) fn compact(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> TriangleMesh {
    let mut used = vec![false; vertices.len()];
    for f in &faces {
        for &v in f {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for (i, p) in vertices.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len();
            kept.push(p);
        }
    }
    let faces = faces.into_iter().map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]]).collect();
    TriangleMesh { vertices: kept, faces }
}

/// Meshes the zero set of the floating-scale implicit field of `oc`.
pub fn reconstruct_surface(oc: &OrientedCloud, cfg: &RefineConfig) -> Result<TriangleMesh> {
    cfg.validate()?;
    if oc.points.len() < 3 {
        return Err(Error::InsufficientPoints { needed: 3, have: oc.points.len() });
    }
    let grid = sample_field(oc, cfg)?;
    let mesh = extract_isosurface(&grid);
    if mesh.faces.is_empty() {
        return Err(Error::NoSurface);
    }
    Ok(mesh)
}
