//! `omnigyro` command-line front-end.
//!
//! Exit codes: 1 generic failure, 2 configuration or parse error,
//! 3 unreadable image, 4 reference frame missing, 5 estimate row missing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omnigyro::config::Settings;
use omnigyro::eval::{
    evaluate_estimates, load_ground_truth, read_estimates, stabilize, write_estimates,
    write_ground_truth, EstimateRecord, DEFAULT_SUCCESS_DEG,
};
use omnigyro::fisheye::{dualfisheye_to_equirect, DualFisheyeImage, LensPair};
use omnigyro::fixtures::SmoothScene;
use omnigyro::pipeline::{
    estimate_sequence, list_frames, FileHeatmaps, FrameRef, HeatmapSource, PipelineConfig,
    SyntheticHeatmaps, CONFIG_KEYS,
};
use omnigyro::{geodesic_angle, rotate_equirect, EquirectImage, Error, RotationSO3};

fn config_help() -> String {
    let mut s = String::from("Config keys (--config file or --set key=value, flags win):\n");
    for (k, doc) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<26} {doc}\n"));
    }
    s.push_str("\nLens keys (convert --lens file):\n");
    for side in ["front", "rear"] {
        for (k, doc) in [
            ("cx", "lens circle center column, px"),
            ("cy", "lens circle center row, px"),
            ("radius", "lens circle radius, px"),
            ("fov", "lens field of view, degrees"),
        ] {
            s.push_str(&format!("  {:<26} {side} {doc}\n", format!("{side}.{k}")));
        }
    }
    s.push_str("\nExit codes: 2 config/parse error, 3 unreadable image, 4 missing reference, 5 missing estimate row.");
    s
}

#[derive(Parser)]
#[command(name = "omnigyro", version, about = "Orientation estimation and stabilization for 360 panoramas")]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert dual-fisheye captures to equirectangular PNGs.
    #[command(after_help = config_help())]
    Convert(ConvertArgs),
    /// Estimate the orientation of every frame relative to a reference.
    #[command(after_help = config_help())]
    Estimate(EstimateArgs),
    /// Rotate frames into the reference orientation.
    #[command(after_help = config_help())]
    Stabilize(StabilizeArgs),
    /// Score estimates against ground truth.
    #[command(after_help = config_help())]
    Evaluate(EvaluateArgs),
    /// Generate a synthetic sequence with heat-maps and ground truth.
    #[command(after_help = config_help())]
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Settings file of key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. --set mpp.lambda_g=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings, Failure> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::parse("", "command line")?,
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::new(2, format!("--set expects KEY=VALUE, got {kv:?}")))?;
            s.set(k, v);
        }
        Ok(s)
    }
}

#[derive(Args)]
struct ConvertArgs {
    /// Directory of dual-fisheye images.
    #[arg(long)]
    input: PathBuf,
    /// Lens settings file with front.* and rear.* keys.
    #[arg(long)]
    lens: PathBuf,
    /// Output directory for equirectangular PNGs.
    #[arg(long)]
    out: PathBuf,
    /// Output panorama width (default: input width).
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Directory of numbered equirectangular frames.
    #[arg(long)]
    frames: PathBuf,
    /// Directory of <stem>_horizon.png and <stem>_vertical.png heat-maps.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    heatmaps: Option<PathBuf>,
    /// Synthesize heat-maps from the ground-truth rotations in --gt.
    #[arg(long, requires = "gt")]
    synth: bool,
    /// Ground truth used by --synth.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Heat-map band width for --synth, degrees.
    #[arg(long, default_value_t = 2.0)]
    sigma_deg: f64,
    /// Heat-map noise amplitude for --synth.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Reference frame id (default: first frame).
    #[arg(long = "ref")]
    reference: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Random seed for RANSAC and synthetic noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output estimates CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilizeArgs {
    /// Directory of numbered equirectangular frames.
    #[arg(long)]
    frames: PathBuf,
    /// Estimates CSV from `estimate`.
    #[arg(long)]
    estimates: PathBuf,
    /// Output directory for <id>_stab.png images.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimates CSV from `estimate`.
    #[arg(long)]
    estimates: PathBuf,
    /// Ground-truth CSV (camera-to-world rotations).
    #[arg(long)]
    gt: PathBuf,
    /// Reference frame id the estimates are relative to.
    #[arg(long = "ref")]
    reference: u64,
    /// Rotation error counted as success, degrees.
    #[arg(long)]
    success_deg: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Per-frame report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the text summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("scene").required(true).args(["source", "procedural"])))]
struct SynthArgs {
    /// Source panorama seen by a camera with identity orientation.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Use a procedural scene with this seed instead of a source panorama.
    #[arg(long, value_name = "SCENE_SEED")]
    procedural: Option<u64>,
    /// Trajectory CSV in ground-truth format, one row per frame.
    #[arg(long)]
    trajectory: PathBuf,
    /// Output directory; receives frames/, heatmaps/ and gt.csv.
    #[arg(long)]
    out: PathBuf,
    /// Panorama width of procedural frames.
    #[arg(long, default_value_t = 512)]
    width: usize,
    /// Heat-map band width, degrees.
    #[arg(long, default_value_t = 2.0)]
    sigma_deg: f64,
    /// Heat-map noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Random seed for heat-map noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::InvalidLens(_) | Error::InvalidParameter(_) => 2,
            Error::Image { .. } | Error::InvalidDimensions { .. } => 3,
            Error::MissingReference(_) => 4,
            _ => 1,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(1, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Convert(a) => convert(a),
        Command::Estimate(a) => estimate(a),
        Command::Stabilize(a) => stabilize_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::new(1, format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn convert(a: ConvertArgs) -> Result<(), Failure> {
    let lenses = LensPair::load(&a.lens).map_err(|e| match e {
        Error::Parse { .. } => Failure::from(e),
        other => Failure::new(2, format!("{}: {other}", a.lens.display())),
    })?;
    std::fs::create_dir_all(&a.out)?;
    let mut failed = 0;
    for path in image_files(&a.input)? {
        let converted = DualFisheyeImage::load(&path, lenses)
            .and_then(|df| {
                let width = a.width.unwrap_or(df.width());
                dualfisheye_to_equirect(&df, width)
            })
            .and_then(|pano| {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                let out = a.out.join(format!("{stem}.png"));
                pano.save(&out).map(|_| out)
            });
        match converted {
            Ok(out) => println!("{} -> {}", path.display(), out.display()),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::new(3, format!("{failed} image(s) could not be converted")));
    }
    Ok(())
}

fn synthetic_source(gt: &Path, sigma_deg: f64, noise: f64, seed: u64) -> Result<SyntheticHeatmaps, Failure> {
    let rotations = load_ground_truth(gt)?
        .into_iter()
        .map(|g| (g.frame_id, g.rotation))
        .collect::<BTreeMap<_, _>>();
    Ok(SyntheticHeatmaps {
        rotations,
        sigma_deg,
        noise,
        seed,
    })
}

fn estimate(a: EstimateArgs) -> Result<(), Failure> {
    let settings = a.config.settings()?;
    let mut cfg = PipelineConfig::from_settings(&settings)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let frames = list_frames(&a.frames)
        .map_err(|e| Failure::new(1, format!("{}: {e}", a.frames.display())))?;
    let out = BufWriter::new(File::create(&a.out)?);
    if frames.is_empty() {
        write_estimates(out, &[])?;
        println!("no frames in {}", a.frames.display());
        return Ok(());
    }
    let ref_id = a.reference.unwrap_or(frames[0].id);
    if !frames.iter().any(|f| f.id == ref_id) {
        return Err(Error::MissingReference(ref_id).into());
    }
    let source: Box<dyn HeatmapSource> = match (&a.heatmaps, &a.gt) {
        (Some(dir), _) => Box::new(FileHeatmaps { dir: dir.clone() }),
        (None, Some(gt)) => Box::new(synthetic_source(gt, a.sigma_deg, a.noise, cfg.seed)?),
        (None, None) => return Err(Failure::new(2, "--heatmaps or --synth --gt is required")),
    };
    let estimates = estimate_sequence(&frames, source.as_ref(), ref_id, &cfg)?;
    let records: Vec<EstimateRecord> = estimates.iter().map(EstimateRecord::from).collect();
    write_estimates(out, &records)?;
    for e in &estimates {
        let [r, p, y] = e.rpy.to_degrees();
        println!(
            "frame {}: roll {r:.3} pitch {p:.3} yaw {y:.3} converged {} horizon {}",
            e.frame_id, e.converged, e.horizon_ok
        );
    }
    Ok(())
}

fn stabilize_cmd(a: StabilizeArgs) -> Result<(), Failure> {
    let frames = list_frames(&a.frames)
        .map_err(|e| Failure::new(1, format!("{}: {e}", a.frames.display())))?;
    let estimates: BTreeMap<u64, RotationSO3> = read_estimates(&a.estimates)?
        .into_iter()
        .map(|e| (e.frame_id, e.rotation))
        .collect();
    // check coverage before writing anything
    if let Some(f) = frames.iter().find(|f| !estimates.contains_key(&f.id)) {
        return Err(Failure::new(
            5,
            format!("no estimate for frame {} in {}", f.id, a.estimates.display()),
        ));
    }
    std::fs::create_dir_all(&a.out)?;
    for f in &frames {
        let r = &estimates[&f.id];
        let img = EquirectImage::load(&f.path)?;
        // identity leaves pixels untouched, so skip resampling
        let out_img = if geodesic_angle(r, &RotationSO3::identity()) == 0.0 {
            img
        } else {
            stabilize(&img, r)
        };
        let out = a.out.join(format!("{}_stab.png", f.id));
        out_img.save(&out)?;
        println!("{} -> {}", f.path.display(), out.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let settings = a.config.settings()?;
    let success = match a.success_deg {
        Some(v) => v,
        None => settings.get("success.threshold_deg")?.unwrap_or(DEFAULT_SUCCESS_DEG),
    };
    if !(success > 0.0) {
        return Err(Failure::new(2, format!("success threshold must be positive, got {success}")));
    }
    let estimates = read_estimates(&a.estimates)?;
    let gt = load_ground_truth(&a.gt)?;
    let report = evaluate_estimates(&estimates, &gt, a.reference, success)?;
    report.write_csv(BufWriter::new(File::create(&a.out)?))?;
    if let Some(path) = &a.summary {
        std::fs::write(path, report.to_string())?;
    }
    print!("{report}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let trajectory = load_ground_truth(&a.trajectory)?;
    let frames_dir = a.out.join("frames");
    let maps_dir = a.out.join("heatmaps");
    std::fs::create_dir_all(&frames_dir)?;
    std::fs::create_dir_all(&maps_dir)?;
    let scene = match (&a.source, a.procedural) {
        (Some(path), _) => Scene::Image(EquirectImage::load(path)?),
        (None, Some(seed)) => {
            if a.width == 0 || !a.width.is_multiple_of(2) {
                return Err(Failure::new(2, format!("--width must be even, got {}", a.width)));
            }
            Scene::Procedural(SmoothScene::random(seed), a.width)
        }
        (None, None) => return Err(Failure::new(2, "--source or --procedural is required")),
    };
    let source = SyntheticHeatmaps {
        rotations: trajectory.iter().map(|g| (g.frame_id, g.rotation)).collect(),
        sigma_deg: a.sigma_deg,
        noise: a.noise,
        seed: a.seed,
    };
    for g in &trajectory {
        // a camera with camera-to-world rotation R sees world(R d)
        let frame = match &scene {
            Scene::Image(img) => rotate_equirect(img, &g.rotation.transpose()),
            Scene::Procedural(s, w) => {
                EquirectImage::from_fn(*w, w / 2, |d| s.brightness(&g.rotation.apply(d)))?
            }
        };
        let stem = format!("{:06}", g.frame_id);
        let path = frames_dir.join(format!("{stem}.png"));
        frame.save(&path)?;
        let fr = FrameRef {
            id: g.frame_id,
            stem: stem.clone(),
            path,
        };
        source.heatmaps(&fr, &frame)?.save(&maps_dir, &stem)?;
    }
    write_ground_truth(a.out.join("gt.csv"), &trajectory)?;
    println!("{} frames written to {}", trajectory.len(), a.out.display());
    Ok(())
}

enum Scene {
    Image(EquirectImage),
    Procedural(SmoothScene, usize),
}
