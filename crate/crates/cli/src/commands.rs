use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use pcrk_core::eval::{evaluate_batch, EvalPair, EvalSettings, Protocol};
use pcrk_core::fitter::{fit as run_fit, fold_upsample, FitConfig, InitMode, FOLD_SIDE};
use pcrk_core::geom::{read_pgm, read_point_cloud, write_mesh, write_pgm, write_point_cloud};
use pcrk_core::losses::LossWeights;
use pcrk_core::metrics::{chamfer, chamfer_unsquared, emd_approx, emd_exact, iou};
use pcrk_core::occlusion::{compose_sample, read_ppm, write_ppm, ComposeConfig, PhotometricParams, RgbImage};
use pcrk_core::projection::{project as project_cloud, ViewSpec};
use pcrk_core::refine::{estimate_normals, refine_pipeline, RefineConfig};
use pcrk_core::{BinaryMask, Error, SeededRng};
use rayon::prelude::*;

use crate::files::{read_camera, read_listing, read_rotation, resolve};
use crate::settings::Settings;
use crate::{EvalArgs, FitArgs, MetricsCommand, ProjectArgs, RefineArgs, SynthArgs};

pub enum Failure {
    /// Missing or conflicting arguments; reported with the usage text.
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn prepare_out(dir: &Path, settings: &Settings) -> CmdResult {
    fs::create_dir_all(dir)?;
    settings.write_to(dir)?;
    Ok(())
}

fn parse_views(spec: &str, camera: Option<&pcrk_core::Camera>) -> Result<Vec<ViewSpec>, Failure> {
    if spec.trim() == "none" {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|v| match v.trim() {
            "camera" => camera
                .cloned()
                .map(ViewSpec::Perspective)
                .ok_or_else(|| Failure::Usage("view 'camera' requires --camera".into())),
            other => other.parse::<ViewSpec>().map_err(Failure::Core),
        })
        .collect()
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let d = FitConfig::default();
    let mut s = Settings::new(&[
        ("target", ""),
        ("mask", ""),
        ("camera", ""),
        ("n", &d.n_coarse.to_string()),
        ("iters", &d.max_iters.to_string()),
        ("lr", &d.learning_rate.to_string()),
        ("seed", &d.seed.to_string()),
        ("init", "sphere"),
        ("views", "ortho-xy,ortho-xz"),
        ("w_rec", &d.weights.w_rec.to_string()),
        ("w_silhouette", &d.weights.w_silhouette.to_string()),
        ("w_proj", &d.weights.w_proj.to_string()),
        ("adam_eps", &d.adam_eps.to_string()),
        ("beta1", &d.adam_beta1.to_string()),
        ("beta2", &d.adam_beta2.to_string()),
        ("stall_patience", &d.stall_patience.to_string()),
        ("stall_tol", &d.stall_tol.to_string()),
        ("fold", "false"),
    ]);
    s.apply_file(a.config.as_deref())?;
    s.flag("target", a.target.as_ref());
    s.flag("mask", a.mask.as_ref());
    s.flag("camera", a.camera.as_ref());
    s.flag("n", a.n);
    s.flag("iters", a.iters);
    s.flag("lr", a.lr);
    s.flag("seed", a.seed);
    s.flag("init", a.init.as_ref());
    s.flag("views", a.views.as_ref());
    s.flag("w_rec", a.w_rec);
    s.flag("w_silhouette", a.w_silhouette);
    s.flag("w_proj", a.w_proj);
    s.flag("adam_eps", a.adam_eps);
    s.flag("beta1", a.beta1);
    s.flag("beta2", a.beta2);
    s.flag("stall_patience", a.stall_patience);
    s.flag("stall_tol", a.stall_tol);
    s.flag("fold", a.fold);

    let target_path = s.path("target").ok_or_else(|| Failure::Usage("--target is required".into()))?;
    let camera = s.path("camera").map(|p| read_camera(&p)).transpose()?;
    let mask = s.path("mask").map(|p| read_pgm(p)).transpose()?;
    if mask.is_some() && camera.is_none() {
        return Err(Failure::Usage("--mask requires --camera".into()));
    }
    let target = read_point_cloud(&target_path)?;
    let init = match s.raw("init") {
        "sphere" => InitMode::UnitSphere,
        "cube" => InitMode::UnitCube,
        "target" => InitMode::FromCloud(target.clone()),
        other => return Err(Error::InvalidArgument(format!("unknown init '{other}'")).into()),
    };
    let cfg = FitConfig {
        n_coarse: s.get("n")?,
        learning_rate: s.get("lr")?,
        adam_eps: s.get("adam_eps")?,
        adam_beta1: s.get("beta1")?,
        adam_beta2: s.get("beta2")?,
        max_iters: s.get("iters")?,
        weights: LossWeights::new(s.get("w_rec")?, s.get("w_silhouette")?, s.get("w_proj")?)?,
        seed: s.get("seed")?,
        init,
        views: parse_views(s.raw("views"), camera.as_ref())?,
        stall_patience: s.get("stall_patience")?,
        stall_tol: s.get("stall_tol")?,
    };
    cfg.validate()?;
    prepare_out(&a.out, &s)?;
    let silhouette = mask.as_ref().zip(camera.as_ref());
    let trace = run_fit(&target, silhouette, &cfg)?;
    write_point_cloud(a.out.join("final.xyz"), &trace.final_cloud)?;
    fs::write(a.out.join("trace.csv"), trace.to_csv())?;
    if s.get::<bool>("fold")? {
        let normals = estimate_normals(&trace.final_cloud, 6)?;
        let dense = fold_upsample(&trace.final_cloud, FOLD_SIDE, Some(&normals))?;
        write_point_cloud(a.out.join("folded.xyz"), &dense)?;
    }
    println!(
        "fit: {} iterations, final loss {} (rec {}, silhouette {}, proj {})",
        trace.rows.len(),
        trace.final_loss.total,
        trace.final_loss.rec,
        trace.final_loss.silhouette,
        trace.final_loss.proj
    );
    Ok(())
}

pub fn refine(a: &RefineArgs) -> CmdResult {
    let d = RefineConfig::default();
    let mut s = Settings::new(&[
        ("input", ""),
        ("resample", "auto"),
        ("knn", &d.knn_for_normals.to_string()),
        ("smooth_iters", &d.smooth_iters.to_string()),
        ("smooth_step", &d.smooth_step.to_string()),
        ("grid", &d.grid_resolution.to_string()),
        ("support_factor", &d.support_radius_factor.to_string()),
        ("min_component_faces", &d.min_component_faces.to_string()),
        ("seed", "0"),
        ("emit_mesh", "false"),
        ("mesh_format", "obj"),
    ]);
    s.apply_file(a.config.as_deref())?;
    s.flag("input", a.input.as_ref());
    s.flag("resample", a.resample);
    s.flag("knn", a.knn);
    s.flag("smooth_iters", a.smooth_iters);
    s.flag("smooth_step", a.smooth_step);
    s.flag("grid", a.grid);
    s.flag("support_factor", a.support_factor);
    s.flag("min_component_faces", a.min_component_faces);
    s.flag("seed", a.seed);
    s.flag("emit_mesh", a.emit_mesh.then_some(true));
    s.flag("mesh_format", a.mesh_format.as_ref());

    let input = s.path("input").ok_or_else(|| Failure::Usage("--input is required".into()))?;
    let mesh_ext = match s.raw("mesh_format") {
        f @ ("obj" | "ply") => f.to_string(),
        other => return Err(Error::InvalidArgument(format!("unknown mesh format '{other}'")).into()),
    };
    let cfg = RefineConfig {
        knn_for_normals: s.get("knn")?,
        smooth_iters: s.get("smooth_iters")?,
        smooth_step: s.get("smooth_step")?,
        grid_resolution: s.get("grid")?,
        support_radius_factor: s.get("support_factor")?,
        min_component_faces: s.get("min_component_faces")?,
        resample_count: s.optional("resample")?,
    };
    cfg.validate()?;
    let cloud = read_point_cloud(&input)?;
    prepare_out(&a.out, &s)?;
    let out = refine_pipeline(&cloud, &cfg, &mut SeededRng::new(s.get("seed")?))?;
    write_point_cloud(a.out.join("refined.xyz"), &out.cloud)?;
    if s.get::<bool>("emit_mesh")? {
        write_mesh(a.out.join(format!("fitted_mesh.{mesh_ext}")), &out.fitted_mesh)?;
        write_mesh(a.out.join(format!("smoothed_mesh.{mesh_ext}")), &out.smoothed_mesh)?;
    }
    println!(
        "refine: {} points from a {}-face surface, min spacing {}",
        out.cloud.len(),
        out.smoothed_mesh.faces.len(),
        out.radius
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let d = EvalSettings::default();
    let mut s = Settings::new(&[
        ("pairs", ""),
        ("pred", ""),
        ("gt", ""),
        ("protocol", "viewer-centered"),
        ("n", "auto"),
        ("pre_rotation", ""),
        ("seed", "0"),
        ("scale", "1"),
        ("squared", &d.squared_chamfer.to_string()),
        ("emd_epsilon", &d.emd_epsilon.to_string()),
        ("icp_iters", &d.icp_max_iters.to_string()),
        ("icp_tol", &d.icp_tol.to_string()),
    ]);
    s.apply_file(a.config.as_deref())?;
    s.flag("pairs", a.pairs.as_ref());
    s.flag("pred", a.pred.as_ref());
    s.flag("gt", a.gt.as_ref());
    s.flag("protocol", a.protocol.as_ref());
    s.flag("n", a.n);
    s.flag("pre_rotation", a.pre_rotation.as_ref());
    s.flag("seed", a.seed);
    s.flag("scale", a.scale);
    s.flag("squared", a.squared);
    s.flag("emd_epsilon", a.emd_epsilon);
    s.flag("icp_iters", a.icp_iters);
    s.flag("icp_tol", a.icp_tol);

    let mut protocol: Protocol = s.raw("protocol").parse()?;
    let n: Option<usize> = s.optional("n")?;
    match (&mut protocol, n) {
        (Protocol::ViewerCentered { n: slot } | Protocol::ObjectCentered { n: slot }, Some(v)) => *slot = v,
        (Protocol::Pix3D { pre_rotation }, _) => {
            if let Some(p) = s.path("pre_rotation") {
                *pre_rotation = read_rotation(&p)?;
            }
        }
        _ => {}
    }
    if s.path("pre_rotation").is_some() && !matches!(protocol, Protocol::Pix3D { .. }) {
        return Err(Failure::Usage("--pre-rotation only applies to the pix3d protocol".into()));
    }
    let settings = EvalSettings {
        emd_epsilon: s.get("emd_epsilon")?,
        squared_chamfer: s.get("squared")?,
        icp_max_iters: s.get("icp_iters")?,
        icp_tol: s.get("icp_tol")?,
    };
    let scale: f64 = s.get("scale")?;
    let pairs = match (s.path("pairs"), s.path("pred"), s.path("gt")) {
        (Some(listing), None, None) => read_listing(&listing, 3, Some("sample_id,pred_path,gt_path"))?
            .into_iter()
            .map(|row| {
                Ok(EvalPair {
                    id: row[0].clone(),
                    pred: read_point_cloud(resolve(&listing, &row[1]))?,
                    gt: read_point_cloud(resolve(&listing, &row[2]))?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?,
        (None, Some(pred), Some(gt)) => vec![EvalPair { id: "0".into(), pred: read_point_cloud(pred)?, gt: read_point_cloud(gt)? }],
        _ => return Err(Failure::Usage("give either --pairs or both --pred and --gt".into())),
    };
    if pairs.is_empty() {
        return Err(Error::Parse("pair listing has no rows".into()).into());
    }
    if let Some(out) = &a.out {
        prepare_out(out, &s)?;
    }
    let report = evaluate_batch(&pairs, &protocol, &settings, s.get("seed")?)?;
    let csv = report.to_csv(scale);
    if let Some(out) = &a.out {
        fs::write(out.join("report.csv"), &csv)?;
    }
    print!("{csv}");
    for (id, msg) in &report.failures {
        eprintln!("warning: sample {id} failed: {msg}");
    }
    if report.records.is_empty() {
        return Err(Error::Degenerate("every sample failed".into()).into());
    }
    Ok(())
}

struct Object {
    image: RgbImage,
    mask: BinaryMask,
}

pub fn synth_occ(a: &SynthArgs) -> CmdResult {
    let d = ComposeConfig::default();
    let mut s = Settings::new(&[
        ("objects", ""),
        ("backgrounds", ""),
        ("count", "10"),
        ("seed", "0"),
        ("p_occlude", &d.p_occlude.to_string()),
        ("p_background", &d.p_background.to_string()),
        ("max_attempts", &d.max_attempts.to_string()),
        ("photometric", "false"),
    ]);
    s.apply_file(a.config.as_deref())?;
    s.flag("objects", a.objects.as_ref());
    s.flag("backgrounds", a.backgrounds.as_ref());
    s.flag("count", a.count);
    s.flag("seed", a.seed);
    s.flag("p_occlude", a.p_occlude);
    s.flag("p_background", a.p_background);
    s.flag("max_attempts", a.max_attempts);
    s.flag("photometric", a.photometric);

    let listing = s.path("objects").ok_or_else(|| Failure::Usage("--objects is required".into()))?;
    let cfg = ComposeConfig { p_occlude: s.get("p_occlude")?, p_background: s.get("p_background")?, max_attempts: s.get("max_attempts")? };
    let count: usize = s.get("count")?;
    let seed: u64 = s.get("seed")?;
    let photometric: bool = s.get("photometric")?;
    let objects: Vec<Object> = read_listing(&listing, 2, None)?
        .iter()
        .map(|row| {
            Ok(Object { image: read_ppm(resolve(&listing, &row[0]))?, mask: read_pgm(resolve(&listing, &row[1]))? })
        })
        .collect::<Result<_, Error>>()?;
    if objects.is_empty() {
        return Err(Error::Parse("object listing has no rows".into()).into());
    }
    let backgrounds: Vec<RgbImage> = match s.path("backgrounds") {
        Some(bl) => read_listing(&bl, 1, None)?
            .iter()
            .map(|row| read_ppm(resolve(&bl, &row[0])))
            .collect::<Result<_, Error>>()?,
        None => Vec::new(),
    };
    if cfg.p_background > 0.0 && backgrounds.is_empty() {
        return Err(Failure::Usage("--backgrounds is required unless --p-background 0".into()));
    }
    prepare_out(&a.out, &s)?;

    let base = SeededRng::new(seed);
    let bg_refs: Vec<&RgbImage> = backgrounds.iter().collect();
    let samples: Vec<(usize, pcrk_core::occlusion::ComposedSample)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.derive(i as u64);
            let obj = rng.below(objects.len());
            // donors come from the other objects when there are any
            let donor_ids: Vec<usize> = (0..objects.len()).filter(|&j| j != obj || objects.len() == 1).collect();
            let donors: Vec<(&RgbImage, &BinaryMask)> = donor_ids.iter().map(|&j| (&objects[j].image, &objects[j].mask)).collect();
            let mut out = compose_sample(&objects[obj].image, &objects[obj].mask, &donors, &bg_refs, &cfg, &mut rng)?;
            out.donor = out.donor.map(|k| donor_ids[k]);
            if photometric {
                out.sample.image = PhotometricParams::sample(&mut rng).apply(&out.sample.image);
            }
            Ok((obj, out))
        })
        .collect::<Result<_, Error>>()?;

    let mut manifest = String::from("# sample object donor background paste_row paste_col occluded_fraction\n");
    for (i, (obj, out)) in samples.iter().enumerate() {
        let smp = &out.sample;
        write_ppm(a.out.join(format!("image_{i:05}.ppm")), &smp.image)?;
        write_pgm(a.out.join(format!("visible_{i:05}.pgm")), &smp.visible_mask)?;
        write_pgm(a.out.join(format!("full_{i:05}.pgm")), &smp.full_mask)?;
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
        let (row, col) = smp.paste_offset.map_or(("-".to_string(), "-".to_string()), |(r, c)| (r.to_string(), c.to_string()));
        let _ = writeln!(
            manifest,
            "{i:05} {obj} {} {} {row} {col} {}",
            opt(out.donor),
            opt(out.background),
            smp.occluded_fraction()
        );
    }
    fs::write(a.out.join("manifest.txt"), manifest)?;
    println!("synth-occ: wrote {count} samples to {}", a.out.display());
    Ok(())
}

pub fn project(a: &ProjectArgs) -> CmdResult {
    let camera = a.camera.as_ref().map(|p| read_camera(p)).transpose()?;
    let views = parse_views(&a.view, camera.as_ref())?;
    let [view] = views.as_slice() else {
        return Err(Failure::Usage("--view takes exactly one view".into()));
    };
    let cloud = read_point_cloud(&a.input)?;
    let pts = project_cloud(&cloud, view)?;
    let mut text = String::with_capacity(pts.len() * 40);
    for [u, v] in &pts.points {
        let _ = writeln!(text, "{u} {v}");
    }
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn metrics(m: &MetricsCommand) -> CmdResult {
    let (value, precision) = match m {
        MetricsCommand::Chamfer { a, b, unsquared, precision } => {
            let (p, q) = (read_point_cloud(a)?, read_point_cloud(b)?);
            (if *unsquared { chamfer_unsquared(&p, &q)? } else { chamfer(&p, &q)? }, *precision)
        }
        MetricsCommand::Emd { a, b, exact, epsilon, precision } => {
            let (p, q) = (read_point_cloud(a)?, read_point_cloud(b)?);
            (if *exact { emd_exact(&p, &q)? } else { emd_approx(&p, &q, *epsilon)? }, *precision)
        }
        MetricsCommand::Iou { a, b, precision } => (iou(&read_pgm(a)?, &read_pgm(b)?)?, *precision),
    };
    println!("{value:.precision$}");
    Ok(())
}
