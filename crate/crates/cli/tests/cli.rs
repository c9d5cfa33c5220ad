use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcrk_core::geom::{read_pgm, read_point_cloud};
use pcrk_core::occlusion::read_ppm;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn pcrk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrk"))
        .args(args)
        .current_dir(fixtures())
        .env_remove("PCRK_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn metrics_print_fixed_precision_values() {
    let o = pcrk(&["metrics", "chamfer", "cube.xyz", "cube.xyz"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0.000000");
    let o = pcrk(&["metrics", "iou", "half_left.pgm", "half_top.pgm"]);
    assert_eq!(stdout(&o).trim(), "0.333333");
    let o = pcrk(&["metrics", "emd", "--exact", "bracket_gt.xyz", "bracket_shifted.xyz", "--precision", "3"]);
    assert_eq!(o.status.code(), Some(2), "600 points exceed the exact-EMD cap");
    let o = pcrk(&["metrics", "emd", "bracket_gt.xyz", "bracket_gt.xyz"]);
    assert_eq!(stdout(&o).trim(), "0.000000");
}

#[test]
fn missing_required_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["fit", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--target"));
    let o = pcrk(&["refine", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcrk(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_with_code_2() {
    let o = pcrk(&["eval", "--pairs", "malformed_pairs.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed_pairs.csv:2"));
    let o = pcrk(&["metrics", "chamfer", "cube.xyz", "does_not_exist.xyz"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "target=cube.xyz\nlearning_rate=0.1\n").unwrap();
    let o = pcrk(&["fit", "--config", path_str(&cfg), "--out", path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degenerate_refine_input_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["refine", "--input", "collinear.xyz", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("normals"));
}

#[test]
fn fit_writes_cloud_trace_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = pcrk(&["fit", "--target", "cube.xyz", "--n", "128", "--iters", "20", "--fold", "true", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_point_cloud(out.join("final.xyz")).unwrap().len(), 128);
    assert_eq!(read_point_cloud(out.join("folded.xyz")).unwrap().len(), 512);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iter,total,rec,silhouette,proj"));
    assert_eq!(trace.lines().count(), 21);

    // the echoed configuration replays to the same result
    let again = tmp.path().join("again");
    let o = pcrk(&["fit", "--config", path_str(&out.join("run_config.txt")), "--out", path_str(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("final.xyz")).unwrap(), fs::read(again.join("final.xyz")).unwrap());
}

#[test]
fn fit_with_silhouette_needs_a_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["fit", "--target", "cube.xyz", "--mask", "half_left.pgm", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn refine_honours_the_resample_count() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["refine", "--input", "sphere_noisy.xyz", "--resample", "2466", "--emit-mesh", "--mesh-format", "ply", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cloud = read_point_cloud(tmp.path().join("refined.xyz")).unwrap();
    assert_eq!(cloud.len(), 2466);
    let err: f64 = cloud.points().iter().map(|p| (p.coords.norm() - 1.0).abs()).sum::<f64>() / 2466.0;
    assert!(err < 0.05, "mean radial error {err}");
    assert!(tmp.path().join("smoothed_mesh.ply").exists());
    assert!(tmp.path().join("fitted_mesh.ply").exists());
}

#[test]
fn eval_reports_every_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["eval", "--pairs", "pairs.csv", "--protocol", "object-centered", "--n", "600", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(fs::read_to_string(tmp.path().join("report.csv")).unwrap(), text);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["sample_id", "cd", "emd"]);
    assert_eq!(rows.len(), 5);
    for row in &rows[1..3] {
        // shifted and similarity-transformed copies are aligned away
        let (cd, emd): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!(cd < 1e-6 && emd < 1e-6, "{row:?}");
    }
    let noisy: f64 = rows[3][1].parse().unwrap();
    assert!(noisy > 1e-6);
    assert_eq!(rows[4][0], "mean");
}

#[test]
fn eval_single_pair_and_failures() {
    let o = pcrk(&["eval", "--pred", "bracket_shifted.xyz", "--gt", "bracket_gt.xyz", "--protocol", "pix3d"]);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let cd: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(cd < 1e-6);
    let o = pcrk(&["eval", "--pred", "collinear.xyz", "--gt", "bracket_gt.xyz", "--protocol", "object-centered", "--n", "10"]);
    // rigid alignment of a collinear cloud is underdetermined; with every
    // sample failed the run itself fails
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("# failed"));
    let o = pcrk(&["eval", "--pred", "bracket_gt.xyz", "--gt", "bracket_gt.xyz", "--protocol", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn project_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("uv.txt");
    let o = pcrk(&["project", "--view", "camera", "--camera", "camera.txt", "--out", path_str(&out), "cube.xyz"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1024);
    for line in text.lines() {
        let uv: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        // the cube spans at most ±0.5·√2 units at depth ≥ 2.5 around the principal point
        assert!(uv.iter().all(|v| (v - 32.0).abs() <= 64.0 * 0.71 / 2.5 + 1e-9), "{line}");
    }
    let o = pcrk(&["project", "--view", "ortho-xy", "cube.xyz"]);
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert_eq!(first, "-0.5 -0.044547905");
    let o = pcrk(&["project", "--view", "camera", "cube.xyz"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_without_occlusion_keeps_visible_equal_to_full() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["synth-occ", "--objects", "objects/objects.txt", "--count", "6", "--p-occlude", "0", "--p-background", "0", "--out", path_str(tmp.path())];
    let o = pcrk(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..6 {
        let v = read_pgm(tmp.path().join(format!("visible_{i:05}.pgm"))).unwrap();
        let f = read_pgm(tmp.path().join(format!("full_{i:05}.pgm"))).unwrap();
        assert_eq!(v, f);
    }
}

#[test]
fn synth_needs_backgrounds_when_they_may_be_used() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&["synth-occ", "--objects", "objects/objects.txt", "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_outputs_match_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcrk(&[
        "synth-occ",
        "--objects",
        "objects/objects.txt",
        "--backgrounds",
        "objects/backgrounds.txt",
        "--count",
        "40",
        "--seed",
        "11",
        "--out",
        path_str(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let objects: Vec<_> = (0..3)
        .map(|k| {
            let dir = fixtures().join("objects");
            (read_ppm(dir.join(format!("object_{k}.ppm"))).unwrap(), read_pgm(dir.join(format!("object_{k}.pgm"))).unwrap())
        })
        .collect();
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    let rows: Vec<Vec<&str>> = manifest.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 40);
    let mut occluded = 0;
    for (i, row) in rows.iter().enumerate() {
        let obj: usize = row[1].parse().unwrap();
        let image = read_ppm(tmp.path().join(format!("image_{i:05}.ppm"))).unwrap();
        let visible = read_pgm(tmp.path().join(format!("visible_{i:05}.pgm"))).unwrap();
        let full = read_pgm(tmp.path().join(format!("full_{i:05}.pgm"))).unwrap();
        assert_eq!(full, objects[obj].1);
        assert!(visible.is_subset_of(&full).unwrap());
        let hidden = full.count() - visible.count();
        assert!(2 * hidden <= full.count());
        let fraction: f64 = row[6].parse().unwrap();
        assert_eq!(fraction, hidden as f64 / full.count() as f64);
        if row[2] != "-" {
            occluded += 1;
            assert_ne!(row[2].parse::<usize>().unwrap(), obj, "donor must be another object");
        } else {
            assert_eq!(visible, full);
        }
        // visible object pixels keep their original colour
        for r in 0..64 {
            for c in 0..64 {
                if visible.get(r, c) {
                    assert_eq!(image.get(r, c), objects[obj].0.get(r, c));
                }
            }
        }
    }
    assert!(occluded > 0 && occluded < 40);
}
