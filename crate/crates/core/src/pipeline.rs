//! Per-frame orientation: horizon roll/pitch, then MPP yaw, then
//! photometric refinement of all three angles against a reference frame.
//!
//! Estimates are rotations from the current camera frame to the reference
//! camera frame, so a frame rendered as `rotate_equirect(reference, C^T)`
//! has estimate `C`. Stage snapshots are reported in the leveled reference
//! frame (gravity up, reference heading), where roll and pitch are the
//! absolute angles of the horizon stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::horizon::{estimate_attitude, synth_heatmaps, HeatMapPair, HorizonAttitude, HorizonConfig};
use crate::icosphere::{build_icosphere, IcosphereGrid};
use crate::mpp::{self, build_mpp, optimize_yaw, yaw_rotation, MppModel, YawOptions};
use crate::panorama::EquirectImage;
use crate::pvg::{PvgAligner, RefineConfig};
use crate::sphere::{rotation_to_rpy, EulerRPY, RotationSO3};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub horizon: HorizonConfig,
    pub mpp_level: u32,
    pub mpp_lambda: f64,
    /// Multi-start yaw search when no warm start is available.
    pub mpp_multistart: bool,
    pub pvg: RefineConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            horizon: HorizonConfig::default(),
            mpp_level: mpp::DEFAULT_LEVEL,
            mpp_lambda: mpp::DEFAULT_LAMBDA,
            mpp_multistart: true,
            pvg: RefineConfig::default(),
            seed: 0,
        }
    }
}

/// Settings keys understood by [`PipelineConfig::from_settings`].
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("mpp.level", "icosphere level of the MPP yaw stage (0-7, default 3)"),
    ("mpp.lambda_g", "shared lobe smoothing of the MPP (> 0, default 0.325)"),
    ("mpp.multistart", "multi-start yaw search on the first frame (true/false, default true)"),
    ("pvg.level", "icosphere level of the photometric refinement (0-7, default 5)"),
    ("pvg.max_iters", "refinement iteration cap (default 100)"),
    ("pvg.step_tol", "refinement stop threshold on the rotation step, rad (default 1e-6)"),
    ("heatmap.threshold", "fraction of the heat-map maximum a pixel must exceed (0-1, default 0.3)"),
    ("ransac.iterations", "horizon RANSAC iterations (default 500)"),
    ("ransac.inlier_angle_deg", "horizon inlier band half-width, degrees (default 2)"),
    ("ransac.min_inliers", "minimum inlier weight ratio (0-1, default 0.3)"),
    ("ransac.gate_deg", "coherence gate between plane normal and vertical, degrees (default 30)"),
    ("success.threshold_deg", "rotation error counted as success, degrees (default 10)"),
];

impl PipelineConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = s.get::<u32>("mpp.level")? {
            if v > crate::icosphere::MAX_LEVEL {
                return Err(s.invalid("mpp.level", "must be at most 7"));
            }
            cfg.mpp_level = v;
        }
        if let Some(v) = s.get::<f64>("mpp.lambda_g")? {
            if !(v > 0.0) {
                return Err(s.invalid("mpp.lambda_g", "must be positive"));
            }
            cfg.mpp_lambda = v;
        }
        if let Some(v) = s.get::<bool>("mpp.multistart")? {
            cfg.mpp_multistart = v;
        }
        if let Some(v) = s.get::<u32>("pvg.level")? {
            if v > crate::icosphere::MAX_LEVEL {
                return Err(s.invalid("pvg.level", "must be at most 7"));
            }
            cfg.pvg.level = v;
        }
        if let Some(v) = s.get("pvg.max_iters")? {
            cfg.pvg.max_iters = v;
        }
        if let Some(v) = s.get::<f64>("pvg.step_tol")? {
            if !(v > 0.0) {
                return Err(s.invalid("pvg.step_tol", "must be positive"));
            }
            cfg.pvg.step_tol = v;
        }
        if let Some(v) = s.get::<f64>("heatmap.threshold")? {
            if !(0.0..1.0).contains(&v) {
                return Err(s.invalid("heatmap.threshold", "must lie in [0, 1)"));
            }
            cfg.horizon.threshold = v;
        }
        if let Some(v) = s.get("ransac.iterations")? {
            cfg.horizon.ransac.iterations = v;
        }
        if let Some(v) = s.get::<f64>("ransac.inlier_angle_deg")? {
            if !(v > 0.0 && v < 90.0) {
                return Err(s.invalid("ransac.inlier_angle_deg", "must lie in (0, 90)"));
            }
            cfg.horizon.ransac.inlier_angle_deg = v;
        }
        if let Some(v) = s.get::<f64>("ransac.min_inliers")? {
            if !(0.0..=1.0).contains(&v) {
                return Err(s.invalid("ransac.min_inliers", "must lie in [0, 1]"));
            }
            cfg.horizon.ransac.min_inliers = v;
        }
        if let Some(v) = s.get::<f64>("ransac.gate_deg")? {
            if !(v > 0.0 && v <= 180.0) {
                return Err(s.invalid("ransac.gate_deg", "must lie in (0, 180]"));
            }
            cfg.horizon.ransac.gate_deg = v;
        }
        Ok(cfg)
    }
}

/// Immutable artifacts of the reference frame.
pub struct Reference {
    id: u64,
    image: EquirectImage,
    /// Reference camera to leveled frame (roll and pitch only).
    leveling: RotationSO3,
    mpp_grid: IcosphereGrid,
    mpp: MppModel,
    pvg: PvgAligner,
}

impl Reference {
    /// When heat-maps are given the reference's own roll and pitch are
    /// estimated and compensated; otherwise it is assumed level.
    pub fn new(
        id: u64,
        image: EquirectImage,
        heatmaps: Option<&HeatMapPair>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let leveling = match heatmaps {
            Some(hm) => {
                let mut rng = frame_rng(cfg.seed, id);
                let att = estimate_attitude(hm, &cfg.horizon, &mut rng)?;
                yaw_rotation(att.roll, att.pitch, 0.0)
            }
            None => RotationSO3::identity(),
        };
        let mpp_grid = build_icosphere(cfg.mpp_level)?;
        let mpp = build_mpp(&image, &mpp_grid, cfg.mpp_lambda)?.rotated(&leveling);
        let pvg = PvgAligner::new(&image, cfg.pvg)?;
        Ok(Self {
            id,
            image,
            leveling,
            mpp_grid,
            mpp,
            pvg,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn image(&self) -> &EquirectImage {
        &self.image
    }

    pub fn leveling(&self) -> &RotationSO3 {
        &self.leveling
    }

    pub fn mpp(&self) -> &MppModel {
        &self.mpp
    }

    pub fn aligner(&self) -> &PvgAligner {
        &self.pvg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Horizon,
    Mpp,
    Pvg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSnapshot {
    pub stage: Stage,
    /// Angles in the leveled reference frame.
    pub rpy: EulerRPY,
    /// Stage-specific cost: `1 - inlier_ratio` for the horizon (NaN when the
    /// horizon fell back to the warm start), the MPP cost, the photometric
    /// cost.
    pub cost: f64,
    /// Photometric cost at this stage's rotation, when evaluated.
    pub photometric_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeEstimate {
    pub frame_id: u64,
    /// Current camera to reference camera.
    pub rotation: RotationSO3,
    pub rpy: EulerRPY,
    pub stage_trace: Vec<StageSnapshot>,
    /// False when the horizon stage failed and the warm start supplied
    /// roll and pitch.
    pub horizon_ok: bool,
    pub converged: bool,
}

impl AttitudeEstimate {
    pub fn stage(&self, stage: Stage) -> Option<&StageSnapshot> {
        self.stage_trace.iter().find(|s| s.stage == stage)
    }

    /// Final angles in the leveled reference frame.
    pub fn leveled_rpy(&self) -> EulerRPY {
        self.stage(Stage::Pvg).map_or(self.rpy, |s| s.rpy)
    }
}

fn frame_rng(seed: u64, frame_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the three stages on one frame.
pub fn estimate_frame(
    frame_id: u64,
    frame: &EquirectImage,
    heatmaps: &HeatMapPair,
    reference: &Reference,
    warm: Option<&AttitudeEstimate>,
    cfg: &PipelineConfig,
) -> Result<AttitudeEstimate> {
    reference.image.same_dimensions(frame)?;
    let mut rng = frame_rng(cfg.seed, frame_id);
    let warm_rpy = warm.map(AttitudeEstimate::leveled_rpy);

    let (roll, pitch, horizon_cost, horizon_ok) =
        match estimate_attitude(heatmaps, &cfg.horizon, &mut rng) {
            Ok(HorizonAttitude {
                roll, pitch, plane, ..
            }) => (roll, pitch, 1.0 - plane.inlier_ratio, true),
            Err(e) => match warm_rpy {
                Some(w) => (w.roll, w.pitch, f64::NAN, false),
                None => return Err(e),
            },
        };
    let yaw0 = warm_rpy.map_or(0.0, |w| w.yaw);

    let opts = YawOptions {
        multistart: warm.is_none() && cfg.mpp_multistart,
        ..YawOptions::default()
    };
    let g_req = build_mpp(frame, &reference.mpp_grid, cfg.mpp_lambda)?;
    let yaw = optimize_yaw(&reference.mpp, &g_req, (roll, pitch), yaw0, &opts)?;

    let to_reference = reference.leveling.transpose();
    let mpp_rotation = to_reference * yaw_rotation(roll, pitch, yaw.yaw);
    let prepared = reference.pvg.prepare(frame)?;
    let refined = reference.pvg.refine_prepared(&prepared, &mpp_rotation);
    let leveled = reference.leveling * refined.rotation;

    let stage_trace = vec![
        StageSnapshot {
            stage: Stage::Horizon,
            rpy: EulerRPY::new(roll, pitch, yaw0),
            cost: horizon_cost,
            photometric_cost: None,
        },
        StageSnapshot {
            stage: Stage::Mpp,
            rpy: EulerRPY::new(roll, pitch, yaw.yaw),
            cost: yaw.final_cost,
            photometric_cost: Some(refined.initial_cost),
        },
        StageSnapshot {
            stage: Stage::Pvg,
            rpy: rotation_to_rpy(&leveled),
            cost: refined.final_cost,
            photometric_cost: Some(refined.final_cost),
        },
    ];
    Ok(AttitudeEstimate {
        frame_id,
        rotation: refined.rotation,
        rpy: rotation_to_rpy(&refined.rotation),
        stage_trace,
        horizon_ok,
        converged: refined.converged,
    })
}

/// One frame of a sequence directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    pub id: u64,
    pub stem: String,
    pub path: PathBuf,
}

/// Panorama files (`png`, `jpg`, `jpeg`) whose stem is a frame number,
/// in lexicographic file-name order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<FrameRef>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let Ok(id) = stem.parse() else { continue };
        frames.push(FrameRef { id, stem, path });
    }
    frames.sort_by(|a, b| a.path.file_name().cmp(&b.path.file_name()));
    Ok(frames)
}

/// Where heat-maps for a frame come from.
pub trait HeatmapSource {
    fn heatmaps(&self, frame: &FrameRef, image: &EquirectImage) -> Result<HeatMapPair>;
}

/// `<stem>_horizon.png` / `<stem>_vertical.png` files in a directory.
pub struct FileHeatmaps {
    pub dir: PathBuf,
}

impl HeatmapSource for FileHeatmaps {
    fn heatmaps(&self, frame: &FrameRef, _image: &EquirectImage) -> Result<HeatMapPair> {
        HeatMapPair::load(&self.dir, &frame.stem)
    }
}

/// Heat-maps synthesized from known camera-to-world rotations.
pub struct SyntheticHeatmaps {
    pub rotations: BTreeMap<u64, RotationSO3>,
    pub sigma_deg: f64,
    pub noise: f64,
    pub seed: u64,
}

impl HeatmapSource for SyntheticHeatmaps {
    fn heatmaps(&self, frame: &FrameRef, image: &EquirectImage) -> Result<HeatMapPair> {
        let r = self.rotations.get(&frame.id).ok_or_else(|| {
            Error::GroundTruthMismatch(format!("no rotation for frame {}", frame.id))
        })?;
        synth_heatmaps(
            &r.transpose(),
            image.width(),
            image.height(),
            self.sigma_deg,
            self.noise,
            self.seed ^ frame.id,
        )
    }
}

/// Estimates every frame in order, warm-starting each from the previous
/// one. The reference frame is leveled with its own heat-maps.
pub fn estimate_sequence(
    frames: &[FrameRef],
    source: &dyn HeatmapSource,
    ref_id: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<AttitudeEstimate>> {
    let ref_frame = frames
        .iter()
        .find(|f| f.id == ref_id)
        .ok_or(Error::MissingReference(ref_id))?;
    let ref_image = EquirectImage::load(&ref_frame.path)?;
    let ref_maps = source.heatmaps(ref_frame, &ref_image)?;
    let reference = Reference::new(ref_id, ref_image, Some(&ref_maps), cfg)?;
    let mut out: Vec<AttitudeEstimate> = Vec::with_capacity(frames.len());
    for f in frames {
        let image = EquirectImage::load(&f.path)?;
        let maps = source.heatmaps(f, &image)?;
        let est = estimate_frame(f.id, &image, &maps, &reference, out.last(), cfg)?;
        out.push(est);
    }
    Ok(out)
}
