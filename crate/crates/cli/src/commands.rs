use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use horecon_core::align::{sequential_icp, IcpConfig, IcpMode};
use horecon_core::eval::{eval_poses, eval_recon, grouped_report, MetricRecord, PoseEvalConfig, ReconConfig, ReconReport, RelativeMode};
use horecon_core::geom::{ColoredPointCloud, PoseSequence, RigidTransform, Rotation, Vec3};
use horecon_core::handcam::{hand_poses, SmoothingMode};
use horecon_core::io::{
    import_sfm_images, load_json, load_keypoints, load_mesh, load_poses, read_records, save_json, save_keypoints,
    save_mask, save_mesh, save_organized, save_poses, save_ppm, write_grouped, write_records, write_trace, Manifest,
    SequenceDir, MANIFEST,
};
use horecon_core::refine::{refine, Frame, RefineConfig};
use horecon_core::segment::{segment, SegmentConfig};
use horecon_core::synth::{
    make_hand_rig, observe_hand_sequence, perturb_poses, relative_to_first, render, Background, MeshKind, Sleeve,
    SynthScene,
};
use horecon_core::vh::{carve, extract_mesh, Bounds, VhConfig};
use horecon_core::Error;

use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "horecon", version, about = "Hand-object registration, reconstruction and evaluation")]
pub struct Cli {
    /// INI file supplying defaults for any long flag (`[<subcommand>]` sections).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Recompute masks from depth range and sleeve color.
    Segment(SegmentArgs),
    /// Register the ground-truth mesh to every frame's point cloud.
    IcpAlign(IcpArgs),
    /// Photometric pose refinement.
    Refine(RefineArgs),
    /// Object poses from hand keypoints.
    HandPoses(HandArgs),
    /// Convert a text SfM image list into a pose file.
    ImportSfm(ImportArgs),
    /// Visual-hull reconstruction from masks and poses.
    Vh(VhArgs),
    /// Accuracy, completeness and F-score of a reconstruction.
    EvalRecon(EvalReconArgs),
    /// Pose quality against ground truth.
    EvalPoses(EvalPosesArgs),
    /// Mean and standard deviation of metric files per group.
    Report(ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment_cmd(a),
        Command::IcpAlign(a) => icp_align(a),
        Command::Refine(a) => refine_cmd(a),
        Command::HandPoses(a) => hand_poses_cmd(a),
        Command::ImportSfm(a) => import_sfm(a),
        Command::Vh(a) => vh(a),
        Command::EvalRecon(a) => eval_recon_cmd(a),
        Command::EvalPoses(a) => eval_poses_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{what}: `{t}` is not a number")))
        })
        .collect()
}

fn parse_vec3(s: &str, what: &str) -> Result<Vec3> {
    let v = parse_floats(s, what)?;
    if v.len() != 3 {
        return Err(CliError::Usage(format!("{what}: expected three comma-separated values")));
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_pairs(s: &str, what: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("{what}: `{p}` is not of the form a:b")))?;
            let a = a.trim().parse::<f64>();
            let b = b.trim().parse::<f64>();
            match (a, b) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(CliError::Usage(format!("{what}: `{p}` is not numeric"))),
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output sequence directory.
    #[arg(long)]
    out: PathBuf,
    /// sphere, bumpy_sphere, box or torus.
    #[arg(long, default_value = "bumpy_sphere")]
    kind: String,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Object size in meters.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 120)]
    height: usize,
    #[arg(long, default_value_t = 160.0)]
    focal: f64,
    /// Depth noise sigma, meters.
    #[arg(long, default_value_t = 0.0)]
    noise_depth: f64,
    /// Hand keypoint pixel noise sigma.
    #[arg(long, default_value_t = 0.0)]
    noise_keypoints: f64,
    /// Hand template joint noise sigma, meters.
    #[arg(long, default_value_t = 0.0)]
    noise_joints: f64,
    /// Rotation magnitude of the per-frame pose perturbation, degrees.
    #[arg(long, default_value_t = 0.0)]
    noise_pose_deg: f64,
    /// Translation magnitude of the per-frame pose perturbation, meters.
    #[arg(long, default_value_t = 0.0)]
    noise_pose_m: f64,
    /// Mask erosion, pixels.
    #[arg(long, default_value_t = 0)]
    noise_erosion: usize,
    /// Attach a green sleeve to the object.
    #[arg(long)]
    sleeve: bool,
    /// Place a wall at this camera depth (meters).
    #[arg(long)]
    background_depth: Option<f64>,
    /// Manifest tag `key=value`; repeatable.
    #[arg(long = "tag")]
    tags: Vec<String>,
}

fn synth(a: SynthArgs) -> Result<()> {
    let kind: MeshKind = a.kind.parse()?;
    let mut scene = SynthScene::new(kind, a.scale, a.frames, a.seed)?;
    scene.intrinsics = horecon_core::geom::CameraIntrinsics::centered(a.focal, a.width, a.height)?;
    scene.noise.depth_sigma = a.noise_depth;
    scene.noise.keypoint_sigma_px = a.noise_keypoints;
    scene.noise.pose_perturb = (a.noise_pose_deg, a.noise_pose_m);
    scene.noise.mask_erosion_px = a.noise_erosion;
    scene.noise.validate()?;
    if a.sleeve {
        scene.sleeve = Some(Sleeve::new(a.scale, Vec3::from(Sleeve::DEFAULT_COLOR))?);
    }
    if let Some(depth) = a.background_depth {
        scene.background = Some(Background {
            depth,
            color: Vec3::new(0.35, 0.3, 0.25),
        });
    }
    let mut manifest = Manifest::new(a.frames, &scene.intrinsics);
    for t in &a.tags {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--tag `{t}` is not key=value")))?;
        manifest.tags.insert(k.to_string(), v.to_string());
    }
    manifest.tags.entry("kind".into()).or_insert_with(|| kind.to_string());

    let frames = render(&scene)?;
    let dir = SequenceDir::new(&a.out);
    fs::create_dir_all(&a.out)?;
    for (i, f) in frames.iter().enumerate() {
        save_ppm(&dir.image_path(i), &f.image)?;
        save_mask(&dir.mask_path(i), &f.mask)?;
        save_organized(&dir.cloud_path(i), &f.cloud)?;
    }
    dir.save_manifest(&manifest)?;
    save_mesh(&dir.mesh_path(), &scene.mesh)?;
    save_poses(&dir.poses_path("gt"), &scene.trajectory)?;
    save_poses(&dir.poses_path("gt_relative"), &relative_to_first(&scene.trajectory))?;
    if a.noise_pose_deg > 0.0 || a.noise_pose_m > 0.0 {
        let noisy = perturb_poses(&scene.trajectory, a.noise_pose_deg, a.noise_pose_m, a.seed.wrapping_add(1));
        save_poses(&dir.poses_path("perturbed"), &noisy)?;
    }
    let hand_in_world = RigidTransform::new(
        Rotation::from_axis_angle(&Vec3::new(0.3, -0.5, 0.8), 0.9),
        Vec3::new(0.0, -1.2 * a.scale, 0.0),
    );
    let keypoints = observe_hand_sequence(
        &make_hand_rig(a.seed),
        &hand_in_world,
        &scene.trajectory,
        &scene.intrinsics,
        a.noise_keypoints,
        a.noise_joints,
        a.seed,
    );
    save_keypoints(&dir.keypoints_path(), &keypoints)?;
    println!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    seq: PathBuf,
    /// Nearest accepted depth, meters.
    #[arg(long, default_value_t = 0.0)]
    depth_min: f64,
    /// Farthest accepted depth, meters.
    #[arg(long, default_value_t = f64::INFINITY)]
    depth_max: f64,
    /// Sleeve color `r,g,b` in [0, 1]; matching pixels are removed.
    #[arg(long)]
    sleeve_color: Option<String>,
    /// Color distance below which a pixel counts as sleeve.
    #[arg(long, default_value_t = 0.15)]
    tol: f64,
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let cfg = SegmentConfig {
        depth_min: a.depth_min,
        depth_max: a.depth_max,
        sleeve_color: a.sleeve_color.as_deref().map(|s| parse_vec3(s, "--sleeve-color")).transpose()?,
        tol: a.tol,
    };
    cfg.validate()?;
    let dir = SequenceDir::new(&a.seq);
    let m = dir.manifest()?;
    let images = dir.images(&m)?;
    let clouds = dir.clouds(&m)?;
    let mut total = 0;
    for (i, (img, cloud)) in images.iter().zip(&clouds).enumerate() {
        let mask = segment(cloud, img, &cfg)?;
        total += mask.count();
        save_mask(&dir.mask_path(i), &mask)?;
    }
    println!("segmented {} frames, {total} foreground pixels", m.frames);
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IcpModeArg {
    PointToPoint,
    PointToPlane,
}

#[derive(Args, Debug)]
pub struct IcpArgs {
    #[arg(long)]
    seq: PathBuf,
    /// Mesh to register; defaults to the sequence's ground-truth mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Pose file whose first pose initializes frame 0 (identity otherwise).
    #[arg(long)]
    init_pose: Option<PathBuf>,
    /// Output pose file; defaults to `poses/icp.txt` in the sequence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-frame residual log; defaults to `<out>.residuals.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    /// Correspondence radius, meters.
    #[arg(long, default_value_t = 0.05)]
    radius: f64,
    #[arg(long, default_value_t = 0.2)]
    trim: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = IcpModeArg::PointToPlane)]
    mode: IcpModeArg,
    #[arg(long, default_value_t = 4.0)]
    sample_density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn icp_align(a: IcpArgs) -> Result<()> {
    let dir = SequenceDir::new(&a.seq);
    let m = dir.manifest()?;
    let mesh = load_mesh(&a.mesh.clone().unwrap_or_else(|| dir.mesh_path()))?;
    let masks = dir.masks(&m)?;
    let clouds: Vec<ColoredPointCloud> = dir
        .clouds(&m)?
        .iter()
        .zip(&masks)
        .map(|(c, mask)| c.masked(mask))
        .collect();
    let init = match &a.init_pose {
        Some(p) => *load_poses(p)?
            .poses
            .first()
            .ok_or_else(|| Error::InvalidInput("initial pose file is empty".into()))?,
        None => RigidTransform::identity(),
    };
    let cfg = IcpConfig {
        max_iterations: a.max_iterations,
        correspondence_radius: a.radius,
        trim_fraction: a.trim,
        convergence_eps: a.eps,
        mode: match a.mode {
            IcpModeArg::PointToPoint => IcpMode::PointToPoint,
            IcpModeArg::PointToPlane => IcpMode::PointToPlane,
        },
        sample_density: a.sample_density,
        seed: a.seed,
    };
    let poses = sequential_icp(&clouds, &mesh, &init, &cfg)?;
    let out = a.out.unwrap_or_else(|| dir.poses_path("icp"));
    save_poses(&out, &poses)?;
    let log = a.log.unwrap_or_else(|| out.with_extension("residuals.tsv"));
    let mut w = create(&log)?;
    writeln!(w, "frame\tvalid\tresidual_m")?;
    let residuals = poses.residuals.clone().unwrap_or_default();
    for i in 0..poses.len() {
        let r = residuals.get(i).copied().unwrap_or(f64::NAN);
        writeln!(w, "{i}\t{}\t{r}", u8::from(poses.valid[i]))?;
    }
    w.flush()?;
    let valid = poses.valid.iter().filter(|&&v| v).count();
    println!("registered {valid}/{} frames -> {}", poses.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    seq: PathBuf,
    /// Initial poses; defaults to `poses/icp.txt` in the sequence.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Mesh carrying the appearance; defaults to the ground-truth mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Output pose file; defaults to `poses/refined.txt` in the sequence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration loss trace (TSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    lambda_wd: Option<f64>,
    /// `s:w,s:w,...` pairs or `default`; overrides the two lambdas.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    samples_per_camera: Option<usize>,
    #[arg(long)]
    lr_appearance: Option<f64>,
    #[arg(long)]
    lr_pose: Option<f64>,
    #[arg(long)]
    surface_points: Option<usize>,
    #[arg(long)]
    final_lr_factor: Option<f64>,
    #[arg(long)]
    appearance_refresh: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn refine_cmd(a: RefineArgs) -> Result<()> {
    let mut cfg = RefineConfig::default();
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    set!(
        lambda_smooth,
        lambda_wd,
        iterations,
        samples_per_camera,
        lr_appearance,
        lr_pose,
        surface_points,
        final_lr_factor,
        appearance_refresh,
        seed
    );
    cfg.grid = match a.grid.as_deref() {
        None => None,
        Some("default") => Some(RefineConfig::default_grid()),
        Some(s) => Some(parse_pairs(s, "--grid")?),
    };
    cfg.validate()?;

    let dir = SequenceDir::new(&a.seq);
    let m = dir.manifest()?;
    let k = m.intrinsics()?;
    let frames: Vec<Frame> = dir
        .images(&m)?
        .into_iter()
        .zip(dir.masks(&m)?)
        .map(|(img, mask)| Frame::new(img, mask, k))
        .collect::<std::result::Result<_, _>>()?;
    let initial = load_poses(&a.poses.unwrap_or_else(|| dir.poses_path("icp")))?;
    let mesh = load_mesh(&a.mesh.unwrap_or_else(|| dir.mesh_path()))?;
    let out = refine(&frames, &mesh, &initial, &cfg)?;
    let path = a.out.unwrap_or_else(|| dir.poses_path("refined"));
    save_poses(&path, &out.poses)?;
    if let Some(t) = &a.trace {
        let mut w = create(t)?;
        write_trace(&mut w, &out.history)?;
        w.flush()?;
    }
    println!(
        "L_rgb {:.6} -> {:.6} (lambda_smooth {}, lambda_wd {}) -> {}",
        out.full_rgb_initial,
        out.full_rgb_final,
        out.lambda_smooth,
        out.lambda_wd,
        path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct HandArgs {
    /// Sequence supplying intrinsics (and keypoints unless `--keypoints`).
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// none, fixed or median.
    #[arg(long, default_value = "none")]
    smooth: String,
    /// Sliding-median window (odd).
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Output pose file; defaults to `poses/hand.txt` in the sequence.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn hand_poses_cmd(a: HandArgs) -> Result<()> {
    let dir = SequenceDir::new(&a.seq);
    let k = dir.manifest()?.intrinsics()?;
    let kp = load_keypoints(&a.keypoints.unwrap_or_else(|| dir.keypoints_path()))?;
    let mode = match a.smooth.as_str() {
        "none" => SmoothingMode::None,
        "fixed" => SmoothingMode::FixedHandPose,
        "median" => SmoothingMode::SlidingMedian { window: a.window },
        s => return Err(CliError::Usage(format!("--smooth: unknown mode `{s}`"))),
    };
    let poses = hand_poses(&kp, &k, mode)?;
    let out = a.out.unwrap_or_else(|| dir.poses_path("hand"));
    save_poses(&out, &poses)?;
    let valid = poses.valid.iter().filter(|&&v| v).count();
    println!("{valid}/{} frames with hand poses -> {}", poses.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// Text image list exported by an SfM tool.
    #[arg(long)]
    images: PathBuf,
    /// Sequence whose manifest gives the frame count.
    #[arg(long, conflicts_with = "frames")]
    seq: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    /// Declare the translations metric instead of scale-free.
    #[arg(long)]
    metric: bool,
    #[arg(long)]
    out: PathBuf,
}

fn import_sfm(a: ImportArgs) -> Result<()> {
    let n = match (&a.seq, a.frames) {
        (Some(s), _) => Some(SequenceDir::new(s).manifest()?.frames),
        (None, n) => n,
    };
    let mut poses = import_sfm_images(open(&a.images)?, n)?;
    if a.metric {
        poses.scale_free = false;
    }
    save_poses(&a.out, &poses)?;
    let valid = poses.valid.iter().filter(|&&v| v).count();
    println!("imported {valid}/{} frames -> {}", poses.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct VhArgs {
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    /// `xmin,ymin,zmin,xmax,ymax,zmax` in meters; derived from the masks otherwise.
    #[arg(long)]
    bounds: Option<String>,
    /// Output mesh; defaults to `recon/vh.ply` in the sequence. Grid
    /// statistics go to `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn vh(a: VhArgs) -> Result<()> {
    let bounds = match a.bounds.as_deref() {
        None => None,
        Some(s) => {
            let v = parse_floats(s, "--bounds")?;
            if v.len() != 6 {
                return Err(CliError::Usage("--bounds: expected six values".into()));
            }
            Some(Bounds::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))?)
        }
    };
    let cfg = VhConfig {
        resolution: a.resolution,
        alpha: a.alpha,
        beta: a.beta,
        bounds,
    };
    let dir = SequenceDir::new(&a.seq);
    let m = dir.manifest()?;
    let masks = dir.masks(&m)?;
    let poses = load_poses(&a.poses)?;
    let grid = carve(&masks, &poses, &m.intrinsics()?, &cfg)?;
    let mesh = extract_mesh(&grid)?;
    let out = a.out.unwrap_or_else(|| a.seq.join("recon/vh.ply"));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_mesh(&out, &mesh)?;
    let stats = serde_json::json!({
        "resolution": grid.resolution,
        "spacing": grid.spacing,
        "origin": [grid.origin.x, grid.origin.y, grid.origin.z],
        "cameras": grid.cameras,
        "alpha": grid.alpha,
        "beta": grid.beta,
        "occupied": grid.occupied_count(),
    });
    save_json(&out.with_extension("json"), &stats)?;
    println!(
        "{} occupied voxels, {} triangles -> {}",
        grid.occupied_count(),
        mesh.faces.len(),
        out.display()
    );
    Ok(())
}

/// Writes records as TSV (`out`) and JSON (`json`), and a summary to stdout.
fn emit<T: serde::Serialize>(records: &[MetricRecord], full: &T, group: &str, out: Option<&Path>, json: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        let mut w = create(p)?;
        write_records(&mut w, group, records)?;
        w.flush()?;
    }
    if let Some(p) = json {
        if let Some(dir) = p.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        save_json(p, full)?;
    }
    let mut stdout = std::io::stdout().lock();
    write_records(&mut stdout, group, records)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalReconArgs {
    /// Reconstructed mesh. A missing file counts as a failed reconstruction.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    samples: usize,
    /// Comma-separated distance thresholds, millimeters.
    #[arg(long, default_value = "5")]
    thresholds: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the similarity alignment of the prediction.
    #[arg(long)]
    no_align: bool,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    /// Group label written into the TSV.
    #[arg(long, default_value = "all")]
    group: String,
    /// Metric TSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn eval_recon_cmd(a: EvalReconArgs) -> Result<()> {
    let thresholds: Vec<f64> = parse_floats(&a.thresholds, "--thresholds")?
        .into_iter()
        .map(|mm| mm / 1000.0)
        .collect();
    let cfg = ReconConfig {
        n_samples: a.samples,
        thresholds: thresholds.clone(),
        seed: a.seed,
        align: !a.no_align,
        procrustes_rounds: a.rounds,
    };
    let gt = load_mesh(&a.gt)?;
    let report = if a.pred.exists() {
        eval_recon(&load_mesh(&a.pred)?, &gt, &cfg)?
    } else {
        eprintln!("warning: {} not found, recorded as a failed reconstruction", a.pred.display());
        ReconReport::failed(&thresholds)
    };
    emit(&report.records(), &report, &a.group, a.out.as_deref(), a.json.as_deref())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RelativeArg {
    Frame0,
    Consecutive,
}

#[derive(Args, Debug)]
pub struct EvalPosesArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated `cm:deg` threshold pairs.
    #[arg(long, default_value = "2:4,5:10,10:20")]
    pairs: String,
    #[arg(long, value_enum, default_value_t = RelativeArg::Frame0)]
    relative: RelativeArg,
    /// Fit a global scale even if the prediction is metric.
    #[arg(long)]
    force_scale: bool,
    #[arg(long, default_value = "all")]
    group: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn eval_poses_cmd(a: EvalPosesArgs) -> Result<()> {
    let cfg = PoseEvalConfig {
        pairs: parse_pairs(&a.pairs, "--pairs")?
            .into_iter()
            .map(|(cm, deg)| (cm / 100.0, deg))
            .collect(),
        relative: match a.relative {
            RelativeArg::Frame0 => RelativeMode::FrameZero,
            RelativeArg::Consecutive => RelativeMode::Consecutive,
        },
        force_scale: a.force_scale,
    };
    let pred: PoseSequence = load_poses(&a.pred)?;
    let gt = load_poses(&a.gt)?;
    let report = eval_poses(&pred, &gt, &cfg)?;
    emit(&report.records(), &report, &a.group, a.out.as_deref(), a.json.as_deref())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metric TSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Group by this manifest tag, looked up in the nearest `manifest.json`
    /// at or above each input. The group column of the files is used otherwise.
    #[arg(long)]
    group_by: Option<String>,
    /// Comma-separated groups that must be present.
    #[arg(long)]
    groups: Option<String>,
    /// Output TSV; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn manifest_tag(input: &Path, tag: &str) -> Result<String> {
    let abs = fs::canonicalize(input)?;
    for dir in abs.ancestors().skip(1) {
        let path = dir.join(MANIFEST);
        if path.is_file() {
            let m: Manifest = load_json(&path)?;
            return m.tags.get(tag).cloned().ok_or_else(|| {
                Error::InvalidInput(format!("{} has no tag `{tag}`", path.display())).into()
            });
        }
    }
    Err(Error::InvalidInput(format!("no {MANIFEST} above {}", input.display())).into())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut items = Vec::new();
    for input in &a.inputs {
        let records = read_records(open(input)?)?;
        match &a.group_by {
            Some(tag) => {
                let group = manifest_tag(input, tag)?;
                items.push((group, records.into_iter().map(|(_, r)| r).collect()));
            }
            None => items.extend(records.into_iter().map(|(g, r)| (g, vec![r]))),
        }
    }
    let required: Vec<String> = a
        .groups
        .as_deref()
        .map(|s| s.split(',').map(|g| g.trim().to_string()).collect())
        .unwrap_or_default();
    let grouped = grouped_report(&items, &required)?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_grouped(&mut w, &grouped)?;
            w.flush()?;
        }
        None => write_grouped(&mut std::io::stdout().lock(), &grouped)?,
    }
    Ok(())
}
