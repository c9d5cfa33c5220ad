//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use pcrk_core::eval::{evaluate, icp, EvalSettings, IcpMode, Protocol, ICP_TOL};
use pcrk_core::fitter::{fit, FitConfig, InitMode};
use pcrk_core::geom::SeededRng;
use pcrk_core::losses::{loss_proj, loss_rec, loss_silhouette, LossWeights};
use pcrk_core::metrics::{chamfer, emd_approx, emd_exact};
use pcrk_core::occlusion::{
    compose_sample, cut_and_paste, paste_range, BBox, ComposeConfig, RgbImage, DEFAULT_MAX_ATTEMPTS,
};
use pcrk_core::projection::{mask_to_points, ViewSpec};
use pcrk_core::refine::{icosphere, poisson_disc_resample, refine_pipeline, sample_surface, smooth_curvature_flow, RefineConfig};
use pcrk_core::{BinaryMask, Camera, PointCloud};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- helpers

fn cube_points(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> PointCloud {
    PointCloud::new((0..n).map(|_| Point3::new(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi))).collect())
        .unwrap()
}

fn brute_directed(from: &PointCloud, to: &PointCloud) -> f64 {
    from.points()
        .iter()
        .map(|a| to.points().iter().map(|b| (a - b).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    brute_directed(a, b) + brute_directed(b, a)
}

fn diameter(points: &[Point3<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max((points[i] - points[j]).norm());
        }
    }
    d
}

/// Minimum mean matched distance over all permutations (Heap's algorithm).
fn brute_emd(p: &PointCloud, q: &PointCloud) -> f64 {
    let n = p.len();
    let cost: Vec<Vec<f64>> = p.points().iter().map(|a| q.points().iter().map(|b| (a - b).norm()).collect()).collect();
    let total = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = total(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

fn fd_gradient(f: impl Fn(&PointCloud) -> f64, c: &PointCloud, h: f64) -> Vec<Vector3<f64>> {
    let pts = c.points().to_vec();
    (0..pts.len())
        .map(|i| {
            let mut g = Vector3::zeros();
            for d in 0..3 {
                let (mut plus, mut minus) = (pts.clone(), pts.clone());
                plus[i][d] += h;
                minus[i][d] -= h;
                g[d] = (f(&PointCloud::new(plus).unwrap()) - f(&PointCloud::new(minus).unwrap())) / (2.0 * h);
            }
            g
        })
        .collect()
}

fn rel_err(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Smallest gap between the nearest and second-nearest target of any query;
/// instances with near ties make the loss non-differentiable.
fn tie_gap(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|a| {
            let mut d: Vec<f64> = to.iter().map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).collect();
            d.sort_by(f64::total_cmp);
            if d.len() > 1 { d[1] - d[0] } else { f64::INFINITY }
        })
        .fold(f64::INFINITY, f64::min)
}

fn coords3(c: &PointCloud) -> Vec<Vec<f64>> {
    c.points().iter().map(|p| vec![p.x, p.y, p.z]).collect()
}

fn coords2(c: &PointCloud, view: &ViewSpec) -> Vec<Vec<f64>> {
    c.points().iter().map(|p| view.project_point(p, 0).unwrap().to_vec()).collect()
}

fn cube_surface(n: usize, rng: &mut SeededRng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let face = rng.below(6);
            let (a, b) = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
            let s = if face % 2 == 0 { -0.5 } else { 0.5 };
            match face / 2 {
                0 => Point3::new(s, a, b),
                1 => Point3::new(a, s, b),
                _ => Point3::new(a, b, s),
            }
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn sphere_samples(n: usize, noise: f64, rng: &mut SeededRng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let d = Vector3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            Point3::from(d * (1.0 + noise * rng.normal()))
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

/// Dense, near-uniform sampling of the unit sphere used as its reference.
fn fibonacci_sphere(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            Point3::new(r * th.cos(), r * th.sin(), z)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn nn_cv(cloud: &PointCloud) -> f64 {
    let idx = cloud.index();
    let d: Vec<f64> = cloud.points().iter().map(|p| idx.knn(p, 2).unwrap()[1].1).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
    var.sqrt() / mean
}

fn bracket(n: usize, seed: u64) -> PointCloud {
    let mut rng = SeededRng::new(seed);
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            if rng.bernoulli(0.6) {
                [rng.uniform(0.0, 2.0), rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.5)]
            } else {
                [rng.uniform(0.0, 0.3), rng.uniform(0.3, 1.2), rng.uniform(0.0, 0.5)]
            }
        })
        .collect();
    PointCloud::from_xyz(&pts).unwrap()
}

fn noise_image(w: usize, h: usize, rng: &mut SeededRng) -> RgbImage {
    RgbImage::from_raw(w, h, (0..3 * w * h).map(|_| rng.below(256) as u8).collect()).unwrap()
}

fn random_ellipse(w: usize, h: usize, rng: &mut SeededRng) -> BinaryMask {
    let (cy, cx) = (rng.uniform(0.2, 0.8) * h as f64, rng.uniform(0.2, 0.8) * w as f64);
    let (ry, rx) = (rng.uniform(0.05, 0.3) * h as f64 + 1.0, rng.uniform(0.05, 0.3) * w as f64 + 1.0);
    BinaryMask::from_fn(w, h, |r, c| ((r as f64 - cy) / ry).powi(2) + ((c as f64 - cx) / rx).powi(2) <= 1.0)
}

/// Upper α = 0.01 quantile of χ²(k), Wilson–Hilferty approximation.
fn chi2_critical_01(k: usize) -> f64 {
    let k = k as f64;
    let z = 2.326_347_874;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

// ---------------------------------------------------------------- criteria

fn metric_oracles() -> Outcome {
    let mut rng = SeededRng::new(1);
    let mut worst_cd: f64 = 0.0;
    for _ in 0..200 {
        let (n, m) = (1 + rng.below(128), 1 + rng.below(128));
        let a = cube_points(&mut rng, n, -1.0, 1.0);
        let b = cube_points(&mut rng, m, -1.0, 1.0);
        let (got, want) = (chamfer(&a, &b).unwrap(), brute_chamfer(&a, &b));
        let err = (got - want).abs();
        ensure!(err <= 1e-12 * want.max(1.0), "chamfer {got} vs brute force {want} (N={n}, M={m})");
        worst_cd = worst_cd.max(err);
    }
    let mut worst_gap: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(64);
        let a = cube_points(&mut rng, n, -1.0, 1.0);
        let b = cube_points(&mut rng, n, -0.5, 1.5);
        let exact = emd_exact(&a, &b).unwrap();
        let approx = emd_approx(&a, &b, 1e-3).unwrap();
        let union: Vec<Point3<f64>> = a.points().iter().chain(b.points()).cloned().collect();
        let upper = exact + 1e-3 * diameter(&union);
        ensure!(approx >= exact - 1e-12 && approx <= upper, "emd_approx {approx} outside [{exact}, {upper}] (n={n})");
        worst_gap = worst_gap.max(approx - exact);
    }
    for _ in 0..20 {
        let a = cube_points(&mut rng, 8, -1.0, 1.0);
        let b = cube_points(&mut rng, 8, -1.0, 1.0);
        let (got, want) = (emd_exact(&a, &b).unwrap(), brute_emd(&a, &b));
        ensure!((got - want).abs() <= 1e-12, "emd_exact {got} vs 8! enumeration {want}");
    }
    Ok(format!("max |chamfer - brute| {worst_cd:.1e}, max emd_approx - exact {worst_gap:.1e}"))
}

fn loss_values() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let p = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
    let q = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
    let rec = loss_rec(&p, &q, true).unwrap();
    ensure!(close(rec.value, 2.0), "reconstruction loss {} != 2", rec.value);
    let g = rec.grad.unwrap()[0];
    ensure!((g - Vector3::new(4.0, 0.0, 0.0)).norm() <= 1e-12, "reconstruction gradient {g:?}");

    let p = PointCloud::from_xyz(&[[0.0, 0.0, 5.0]]).unwrap();
    let q = PointCloud::from_xyz(&[[3.0, 4.0, 9.0]]).unwrap();
    let proj = loss_proj(&p, &q, &[ViewSpec::OrthoXY], false).unwrap().value;
    ensure!(close(proj, 25.0), "reprojection loss {proj} != 25");

    let cam = Camera::looking_down_z(1.0, 1.0, 0.0, 0.0).unwrap();
    let mask = BinaryMask::from_fn(8, 8, |r, c| r == 0 && c == 0);
    let q = PointCloud::from_xyz(&[[3.5, 4.5, 1.0]]).unwrap();
    let sil = loss_silhouette(&mask, &q, &cam, false).unwrap().value;
    ensure!(close(sil, 25.0), "silhouette loss {sil} != 25");

    let total = LossWeights::standard().combine(2.0, 1e6, 1e7);
    ensure!(close(total, 2.002), "weighted total {total} != 2.002");

    // finite differences on random instances without nearest-neighbour ties
    let mut rng = SeededRng::new(2);
    let views = ViewSpec::default_proj_views();
    let cam = Camera::new(30.0, 30.0, 16.0, 16.0, *Rotation3::from_euler_angles(0.05, 0.1, -0.1).matrix(), Vector3::new(0.0, 0.0, 0.5))
        .unwrap();
    let mask = BinaryMask::from_fn(32, 32, |r, c| (8..24).contains(&r) && (6..26).contains(&c) && (r * 7 + c * 3) % 5 != 0);
    let targets: Vec<Vec<f64>> = mask_to_points(&mask).points.iter().map(|t| t.to_vec()).collect();
    let cam_view = ViewSpec::Perspective(cam.clone());
    let mut worst: [f64; 3] = [0.0; 3];
    let mut counts = [0usize; 3];
    while counts.iter().any(|&c| c < 50) {
        let n = 4 + rng.below(20);
        let p = cube_points(&mut rng, n, -1.0, 1.0);
        let m = 4 + rng.below(20);
        let q = cube_points(&mut rng, m, -1.0, 1.0);
        let far = q.map(|x| Point3::new(x.x, x.y, x.z + 3.5)).unwrap();
        if counts[0] < 50 && tie_gap(&coords3(&p), &coords3(&q)).min(tie_gap(&coords3(&q), &coords3(&p))) > 1e-3 {
            let l = loss_rec(&p, &q, true).unwrap();
            let fd = fd_gradient(|c| loss_rec(&p, c, false).unwrap().value, &q, 1e-5);
            worst[0] = worst[0].max(rel_err(l.grad.as_ref().unwrap(), &fd));
            counts[0] += 1;
        }
        if counts[1] < 50 && views.iter().all(|v| tie_gap(&coords2(&p, v), &coords2(&q, v)) > 1e-3) {
            let l = loss_proj(&p, &q, &views, true).unwrap();
            let fd = fd_gradient(|c| loss_proj(&p, c, &views, false).unwrap().value, &q, 1e-5);
            worst[1] = worst[1].max(rel_err(l.grad.as_ref().unwrap(), &fd));
            counts[1] += 1;
        }
        if counts[2] < 50 && tie_gap(&targets, &coords2(&far, &cam_view)) > 1e-3 {
            let l = loss_silhouette(&mask, &far, &cam, true).unwrap();
            let fd = fd_gradient(|c| loss_silhouette(&mask, c, &cam, false).unwrap().value, &far, 1e-5);
            worst[2] = worst[2].max(rel_err(l.grad.as_ref().unwrap(), &fd));
            counts[2] += 1;
        }
    }
    ensure!(worst.iter().all(|&e| e < 1e-5), "gradient relative errors {worst:?} exceed 1e-5");
    Ok(format!("hand values exact; gradient rel. error rec {:.1e}, proj {:.1e}, silhouette {:.1e}", worst[0], worst[1], worst[2]))
}

fn fitter_convergence() -> Outcome {
    let target = cube_surface(1024, &mut SeededRng::new(77));
    let cfg = FitConfig {
        n_coarse: 1024,
        learning_rate: 3e-3,
        max_iters: 2000,
        weights: LossWeights::standard(),
        seed: 7,
        init: InitMode::UnitSphere,
        ..FitConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let trace = pool.install(|| fit(&target, None, &cfg)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let cd = chamfer(&target, &trace.final_cloud).unwrap();
    let rows = &trace.rows[10..];
    let steps = rows.len() - 1;
    let non_inc = rows.windows(2).filter(|w| w[1].total <= w[0].total).count();
    let frac = non_inc as f64 / steps as f64;
    ensure!(cd < 1e-2, "final chamfer {cd:.3e} >= 1e-2");
    ensure!(frac >= 0.95, "only {:.1}% of steps non-increasing", 100.0 * frac);
    ensure!(secs < 120.0, "single-threaded fit took {secs:.1}s");
    Ok(format!("chamfer {cd:.2e} after {} iterations, {:.1}% non-increasing, fit {secs:.1}s", trace.rows.len(), 100.0 * frac))
}

fn refinement() -> Outcome {
    let noisy = sphere_samples(2000, 0.02, &mut SeededRng::new(21));
    let reference = fibonacci_sphere(20_000);
    let cfg = RefineConfig { grid_resolution: 64, ..RefineConfig::default() };
    let out = refine_pipeline(&noisy, &cfg, &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    let before = chamfer(&noisy, &reference).unwrap();
    let after = chamfer(&out.cloud, &reference).unwrap();
    ensure!(after < before, "chamfer to the sphere rose from {before:.3e} to {after:.3e}");

    let mut mesh = icosphere(3);
    let mut volumes = vec![mesh.signed_volume()];
    for _ in 0..5 {
        mesh = smooth_curvature_flow(&mesh, 1, cfg.smooth_step).map_err(|e| e.to_string())?;
        volumes.push(mesh.signed_volume());
    }
    ensure!(volumes.windows(2).all(|w| w[1] < w[0]), "icosphere volumes not decreasing: {volumes:?}");

    let surface = &out.smoothed_mesh;
    let (mut cv_pd, mut cv_rand) = (0.0, 0.0);
    for seed in 0..10 {
        let (pd, r) = poisson_disc_resample(surface, 500, &mut SeededRng::new(seed)).map_err(|e| e.to_string())?;
        ensure!(pd.len() == 500, "poisson-disc returned {} points", pd.len());
        let min = diameter_min(pd.points());
        ensure!(min >= r, "min pairwise distance {min} below reported radius {r}");
        cv_pd += nn_cv(&pd) / 10.0;
        let rand = PointCloud::new(sample_surface(surface, 500, &mut SeededRng::new(100 + seed)).unwrap()).unwrap();
        cv_rand += nn_cv(&rand) / 10.0;
    }
    ensure!(cv_pd < cv_rand, "poisson-disc CV {cv_pd:.3} not below random CV {cv_rand:.3}");
    Ok(format!(
        "chamfer {before:.2e} -> {after:.2e}; volume {:.4} -> {:.4}; NN-distance CV {cv_pd:.3} vs random {cv_rand:.3}",
        volumes[0], volumes[5]
    ))
}

fn diameter_min(points: &[Point3<f64>]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.min((points[i] - points[j]).norm());
        }
    }
    d
}

fn occlusion() -> Outcome {
    let (w, h) = (224, 224);
    let mut rng = SeededRng::new(5);
    for i in 0..1000u64 {
        let img = noise_image(w, h, &mut rng);
        let mask = random_ellipse(w, h, &mut rng);
        let donor = noise_image(w, h, &mut rng);
        let donor_mask = random_ellipse(w, h, &mut rng);
        let s = cut_and_paste(&img, &mask, &donor, &donor_mask, &mut rng.derive(i), DEFAULT_MAX_ATTEMPTS).map_err(|e| e.to_string())?;
        ensure!(s.visible_mask.is_subset_of(&s.full_mask).unwrap(), "sample {i}: visible not within full");
        let hidden = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| mask.get(r, c) && !s.visible_mask.get(r, c)).count();
        ensure!(2 * hidden <= mask.count(), "sample {i}: {hidden} of {} pixels hidden", mask.count());
        for r in 0..h {
            for c in 0..w {
                ensure!(s.occluder_mask.get(r, c) || s.image.get(r, c) == img.get(r, c), "sample {i}: pixel ({r},{c}) modified");
            }
        }
    }

    let img = noise_image(w, h, &mut rng);
    let mask = BinaryMask::from_fn(w, h, |r, c| (80..150).contains(&r) && (70..160).contains(&c));
    let donor = noise_image(w, h, &mut rng);
    let donor_mask = BinaryMask::from_fn(w, h, |r, c| (10..90).contains(&r) && (30..90).contains(&c));
    let donors = [(&donor, &donor_mask)];
    let cfg = ComposeConfig { p_background: 0.0, ..ComposeConfig::default() };
    let mut occluded = 0;
    for i in 0..10_000u64 {
        let out = compose_sample(&img, &mask, &donors, &[], &cfg, &mut rng.derive(i)).map_err(|e| e.to_string())?;
        occluded += out.donor.is_some() as usize;
    }
    let freq = occluded as f64 / 10_000.0;
    ensure!((freq - 0.5).abs() <= 0.02, "occlusion frequency {freq}");

    // accepted locations from rectangle overlap, independent of the paster
    let (rows, cols) = paste_range(BBox::of_mask(&mask).unwrap(), BBox::of_mask(&donor_mask).unwrap(), w, h);
    let overlap = |r: i64, c: i64| {
        let span = |lo: i64, hi: i64, at: i64, len: i64, limit: i64| (hi.min(at + len).min(limit) - lo.max(at).max(0)).max(0);
        span(80, 150, r, 80, h as i64) * span(70, 160, c, 60, w as i64)
    };
    let nb = 12;
    let bin = |r: i64, c: i64| {
        let br = ((r - rows.0) * nb / (rows.1 - rows.0 + 1)) as usize;
        let bc = ((c - cols.0) * nb / (cols.1 - cols.0 + 1)) as usize;
        br * nb as usize + bc
    };
    let mut expected: BTreeMap<usize, f64> = BTreeMap::new();
    let mut accepted = 0usize;
    let mut total = 0usize;
    for r in rows.0..=rows.1 {
        for c in cols.0..=cols.1 {
            total += 1;
            if 2 * overlap(r, c) <= 70 * 90 {
                accepted += 1;
                *expected.entry(bin(r, c)).or_insert(0.0) += 1.0;
            }
        }
    }
    ensure!(accepted < total, "uniformity case does not exercise rejection");
    let draws = 10_000usize;
    let mut observed: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..draws {
        let s = cut_and_paste(&img, &mask, &donor, &donor_mask, &mut rng.derive(20_000 + i as u64), DEFAULT_MAX_ATTEMPTS)
            .map_err(|e| e.to_string())?;
        let (r, c) = s.paste_offset.unwrap();
        ensure!(2 * overlap(r, c) <= 70 * 90, "accepted a location the overlap oracle rejects: ({r}, {c})");
        *observed.entry(bin(r, c)).or_insert(0) += 1;
    }
    let mut stat = 0.0;
    for (b, count) in &expected {
        let e = count / accepted as f64 * draws as f64;
        let o = *observed.get(b).unwrap_or(&0) as f64;
        stat += (o - e).powi(2) / e;
    }
    let dof = expected.len() - 1;
    let crit = chi2_critical_01(dof);
    ensure!(stat < crit, "chi-square {stat:.1} >= {crit:.1} ({dof} dof)");
    Ok(format!("1000 samples valid; occlusion frequency {freq:.4}; chi-square {stat:.1} < {crit:.1} ({dof} dof)"))
}

fn eval_invariances() -> Outcome {
    let settings = EvalSettings::default();
    let gt = bracket(1024, 2);
    let pred = gt.map(|p| Point3::from(p.coords * 1.7 + Vector3::new(3.0, 1.0, -2.0))).unwrap();
    let r = evaluate(&pred, &gt, &Protocol::object_centered(), &settings, &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    ensure!(r.cd < 1e-6 && r.emd < 1e-6, "object-centered similarity: cd {:.2e}, emd {:.2e}", r.cd, r.emd);

    let base = bracket(800, 3);
    let pre = Rotation3::from_euler_angles(0.2, -0.4, 0.9);
    let stored = base.transformed(pre.inverse().matrix(), &Vector3::zeros());
    let proto = Protocol::Pix3D { pre_rotation: *pre.matrix() };
    let shifted = base.transformed(&Matrix3::identity(), &Vector3::new(0.5, -1.0, 2.0));
    let t = evaluate(&shifted, &stored, &proto, &settings, &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    ensure!(t.cd < 1e-6 && t.emd < 1e-6, "pix3d translation: cd {:.2e}, emd {:.2e}", t.cd, t.emd);
    let spun = base.transformed(Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).matrix(), &Vector3::zeros());
    let s = evaluate(&spun, &stored, &proto, &settings, &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    ensure!(s.cd > 1e-3, "pix3d 30 degree rotation scored only {:.2e}", s.cd);

    let source = bracket(1000, 4);
    let truth = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 0.5)), 10f64.to_radians());
    let target = source.transformed(truth.matrix(), &Vector3::new(0.05, -0.02, 0.03));
    let fit = icp(&source, &target, IcpMode::Full, 200, ICP_TOL).map_err(|e| e.to_string())?;
    let frob = (fit.rotation - truth.matrix()).norm();
    ensure!(frob < 1e-4, "ICP rotation error {frob:.2e}");
    Ok(format!(
        "object-centered {:.1e}/{:.1e}; pix3d translated {:.1e}, rotated {:.2e}; ICP error {frob:.1e}",
        r.cd, r.emd, t.cd, s.cd
    ))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run_cli(args: &[&str], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pcrk"));
    cmd.args(args).current_dir(fixtures());
    match threads {
        Some(t) => cmd.env("PCRK_THREADS", t),
        None => cmd.env_remove("PCRK_THREADS"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "pcrk {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    Ok(out.stdout)
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: [(&str, Vec<&str>); 5] = [
        ("fit", vec!["fit", "--target", "cube.xyz", "--n", "256", "--iters", "150", "--lr", "0.003", "--seed", "4", "--fold", "true"]),
        ("refine", vec!["refine", "--input", "sphere_noisy.xyz", "--seed", "2", "--emit-mesh", "--resample", "1500"]),
        (
            "synth-occ",
            vec!["synth-occ", "--objects", "objects/objects.txt", "--backgrounds", "objects/backgrounds.txt", "--count", "40", "--seed", "9", "--photometric", "true"],
        ),
        ("eval", vec!["eval", "--pairs", "pairs.csv", "--protocol", "object-centered", "--n", "600", "--seed", "1"]),
        ("eval-pix3d", vec!["eval", "--pairs", "pairs.csv", "--protocol", "pix3d", "--pre-rotation", "rotation.txt", "--seed", "1"]),
    ];
    let mut files = 0;
    for (name, args) in &commands {
        let mut runs = Vec::new();
        // the second run is single-threaded: results must not depend on scheduling
        for (k, threads) in [None, Some("1")].into_iter().enumerate() {
            // identical invocation each time, so the output directory is reused
            let out = tmp.path().join(name);
            if k > 0 {
                fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
            }
            let mut full: Vec<&str> = args.clone();
            let out_str = out.to_str().unwrap().to_string();
            full.push("--out");
            full.push(&out_str);
            let stdout = run_cli(&full, threads)?;
            runs.push((stdout, dir_contents(&out)));
        }
        ensure!(runs[0].1.len() > 1, "{name} wrote no outputs");
        ensure!(runs[0].0 == runs[1].0, "{name}: standard output differs between runs");
        for (file, bytes) in &runs[0].1 {
            ensure!(runs[1].1.get(file) == Some(bytes), "{name}: {file} differs between runs");
        }
        ensure!(runs[0].1.len() == runs[1].1.len(), "{name}: different file sets");
        files += runs[0].1.len();
    }
    Ok(format!("{files} output files byte-identical across re-runs (fit, refine, synth-occ, eval)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, f64); 7] = [
        ("metric oracle equivalence", metric_oracles, 30.0),
        ("loss correctness", loss_values, 60.0),
        ("fitter convergence", fitter_convergence, f64::INFINITY),
        ("refinement pipeline", refinement, 120.0),
        ("occlusion synthesis", occlusion, 60.0),
        ("evaluation protocol invariances", eval_invariances, 30.0),
        ("determinism", determinism, f64::INFINITY),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if secs >= *budget => Err(format!("took {secs:.1}s, budget {budget}s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
