//! `pcrk`: batch front end for fitting, refinement, evaluation, occlusion
//! synthesis, projection and metrics.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 runtime or numerical
//! failure.

mod commands;
mod files;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pcrk", version, about = "Point-cloud reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit free points to a target cloud (and optional silhouette).
    Fit(FitArgs),
    /// Surface-based refinement: mesh, clean, smooth and resample a cloud.
    Refine(RefineArgs),
    /// Score predictions against ground truth under an evaluation protocol.
    Eval(EvalArgs),
    /// Generate cut-and-paste occlusion samples.
    SynthOcc(SynthArgs),
    /// Project a cloud to 2D.
    Project(ProjectArgs),
    /// One-shot metrics between two files.
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Args)]
pub struct FitArgs {
    /// Target point cloud (.xyz or .ply).
    #[arg(long)]
    pub target: Option<String>,
    /// Ground-truth silhouette (.pgm); requires --camera.
    #[arg(long)]
    pub mask: Option<String>,
    /// Camera file for the silhouette term.
    #[arg(long)]
    pub camera: Option<String>,
    /// Number of free points.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initialisation: sphere, cube or target.
    #[arg(long)]
    pub init: Option<String>,
    /// Comma-separated reprojection views (ortho-xy, ortho-yz, ortho-xz,
    /// camera) or `none`.
    #[arg(long)]
    pub views: Option<String>,
    #[arg(long)]
    pub w_rec: Option<f64>,
    #[arg(long)]
    pub w_silhouette: Option<f64>,
    #[arg(long)]
    pub w_proj: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Stop after this many iterations without relative improvement (0 = never).
    #[arg(long)]
    pub stall_patience: Option<usize>,
    #[arg(long)]
    pub stall_tol: Option<f64>,
    /// Also write the 4x folded cloud.
    #[arg(long)]
    pub fold: Option<bool>,
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RefineArgs {
    /// Input point cloud.
    #[arg(long)]
    pub input: Option<String>,
    /// Output point count (default: input size).
    #[arg(long)]
    pub resample: Option<usize>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub smooth_iters: Option<usize>,
    #[arg(long)]
    pub smooth_step: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub support_factor: Option<f64>,
    #[arg(long)]
    pub min_component_faces: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the fitted and smoothed meshes.
    #[arg(long)]
    pub emit_mesh: bool,
    /// Mesh format for --emit-mesh: obj or ply.
    #[arg(long)]
    pub mesh_format: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// CSV listing of `sample_id,pred_path,gt_path` rows.
    #[arg(long)]
    pub pairs: Option<String>,
    /// Single prediction (with --gt) instead of a listing.
    #[arg(long)]
    pub pred: Option<String>,
    #[arg(long)]
    pub gt: Option<String>,
    /// viewer-centered, object-centered or pix3d.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Sample count for the viewer- and object-centered protocols.
    #[arg(long)]
    pub n: Option<usize>,
    /// Rotation file (nine numbers) applied to ground truth under pix3d.
    #[arg(long)]
    pub pre_rotation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Display multiplier for reported metrics.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Report Chamfer distance with squared (true) or plain distances.
    #[arg(long)]
    pub squared: Option<bool>,
    #[arg(long)]
    pub emd_epsilon: Option<f64>,
    #[arg(long)]
    pub icp_iters: Option<usize>,
    #[arg(long)]
    pub icp_tol: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for report.csv and run_config.txt; the report is always
    /// printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Listing of `image.ppm mask.pgm` rows forming the object pool.
    #[arg(long)]
    pub objects: Option<String>,
    /// Listing of background .ppm images.
    #[arg(long)]
    pub backgrounds: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p_occlude: Option<f64>,
    #[arg(long)]
    pub p_background: Option<f64>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Apply the photometric augmentation to every output image.
    #[arg(long)]
    pub photometric: Option<bool>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ProjectArgs {
    /// ortho-xy, ortho-yz, ortho-xz or camera.
    #[arg(long)]
    pub view: String,
    /// Camera file for --view camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub input: PathBuf,
}

#[derive(Subcommand)]
pub enum MetricsCommand {
    /// Chamfer distance between two clouds.
    Chamfer {
        a: PathBuf,
        b: PathBuf,
        /// Use plain rather than squared nearest-neighbour distances.
        #[arg(long)]
        unsquared: bool,
        #[arg(long, default_value_t = 6)]
        precision: usize,
    },
    /// Earth Mover's Distance between two equal-size clouds.
    Emd {
        a: PathBuf,
        b: PathBuf,
        /// Exact assignment (small clouds only).
        #[arg(long)]
        exact: bool,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 6)]
        precision: usize,
    },
    /// Intersection over union of two masks.
    Iou {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 6)]
        precision: usize,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("PCRK_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring PCRK_THREADS={v}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let (name, result) = match &cli.command {
        Command::Fit(a) => ("fit", commands::fit(a)),
        Command::Refine(a) => ("refine", commands::refine(a)),
        Command::Eval(a) => ("eval", commands::eval(a)),
        Command::SynthOcc(a) => ("synth-occ", commands::synth_occ(a)),
        Command::Project(a) => ("project", commands::project(a)),
        Command::Metrics(m) => ("metrics", commands::metrics(m)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            let mut cmd = Cli::command();
            let sub = cmd.find_subcommand_mut(name).expect("known subcommand");
            let _ = sub.error(clap::error::ErrorKind::MissingRequiredArgument, msg).print();
            ExitCode::from(2)
        }
        Err(commands::Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
