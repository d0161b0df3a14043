//! Error metrics, ground truth, estimate files and sequence reports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::horizon::normal_from_rollpitch;
use crate::panorama::{rotate_equirect, EquirectImage};
use crate::pipeline::{
    estimate_sequence, AttitudeEstimate, FrameRef, HeatmapSource, PipelineConfig, Stage,
};
use crate::sphere::{geodesic_angle, rpy_to_rotation, Direction, EulerRPY, RotationSO3};

pub const DEFAULT_SUCCESS_DEG: f64 = 10.0;

/// Angle between two plane normals, degrees.
pub fn normal_angle_error(n: &Direction, n_hat: &Direction) -> f64 {
    n.angle_to(n_hat).to_degrees()
}

/// Geodesic distance between two rotations, degrees.
pub fn rotation_angle_error(r_gt: &RotationSO3, r_pred: &RotationSO3) -> f64 {
    geodesic_angle(r_gt, r_pred).to_degrees()
}

/// World-from-camera attitude of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRecord {
    pub frame_id: u64,
    pub rotation: RotationSO3,
    pub timestamp: Option<f64>,
}

impl GroundTruthRecord {
    /// World up seen from the camera.
    pub fn horizon_normal(&self) -> Direction {
        self.rotation.apply_inverse(&Direction::UP)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Parses `frame_id,qw,qx,qy,qz` or `frame_id,roll_deg,pitch_deg,yaw_deg`
/// rows, told apart by column count. A leading header row is skipped.
pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let mut out: Vec<GroundTruthRecord> = Vec::new();
    for (i, rec) in csv_reader(text).records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let Ok(frame_id) = rec[0].parse::<u64>() else {
            if out.is_empty() && i == 0 {
                continue;
            }
            return Err(parse_err(path, line, format!("bad frame id {:?}", &rec[0])));
        };
        let nums = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err(path, line, "non-numeric field"))?;
        let rotation = match nums.as_slice() {
            [qw, qx, qy, qz] => {
                let q = Quaternion::new(*qw, *qx, *qy, *qz);
                if q.norm() < 1e-12 {
                    return Err(parse_err(path, line, "zero quaternion"));
                }
                let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
                RotationSO3::from_matrix(*m.matrix()).map_err(|_| parse_err(path, line, "bad quaternion"))?
            }
            [r, p, y] => rpy_to_rotation(EulerRPY::from_degrees(*r, *p, *y)),
            _ => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected 4 or 5 columns, got {}", rec.len()),
                ))
            }
        };
        if let Some(prev) = out.last() {
            if frame_id <= prev.frame_id {
                return Err(parse_err(
                    path,
                    line,
                    format!("frame id {frame_id} not above {}", prev.frame_id),
                ));
            }
        }
        out.push(GroundTruthRecord {
            frame_id,
            rotation,
            timestamp: None,
        });
    }
    Ok(out)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    parse_ground_truth(&text, path)
}

/// Writes rows in the roll/pitch/yaw form.
pub fn write_ground_truth(path: impl AsRef<Path>, records: &[GroundTruthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame_id", "roll_deg", "pitch_deg", "yaw_deg"])?;
    for r in records {
        let [roll, pitch, yaw] = r.rotation.to_rpy().to_degrees();
        w.write_record(&[
            r.frame_id.to_string(),
            fmt_f(roll),
            fmt_f(pitch),
            fmt_f(yaw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.9}")
    }
}

/// One row of an estimates file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub frame_id: u64,
    /// Current camera to reference camera.
    pub rotation: RotationSO3,
    pub converged: bool,
    pub horizon_ok: bool,
    /// `(stage, leveled rpy, cost)` for horizon, MPP and PVG.
    pub stages: [(EulerRPY, f64); 3],
}

impl From<&AttitudeEstimate> for EstimateRecord {
    fn from(e: &AttitudeEstimate) -> Self {
        let stage = |s| {
            e.stage(s)
                .map_or((EulerRPY::default(), f64::NAN), |snap| (snap.rpy, snap.cost))
        };
        Self {
            frame_id: e.frame_id,
            rotation: e.rotation,
            converged: e.converged,
            horizon_ok: e.horizon_ok,
            stages: [stage(Stage::Horizon), stage(Stage::Mpp), stage(Stage::Pvg)],
        }
    }
}

impl EstimateRecord {
    /// Horizon normal of the first stage, when it succeeded.
    pub fn horizon_normal(&self) -> Option<Direction> {
        let (rpy, _) = self.stages[0];
        self.horizon_ok
            .then(|| normal_from_rollpitch(rpy.roll, rpy.pitch))
    }
}

pub const ESTIMATE_HEADER: [&str; 18] = [
    "frame_id",
    "roll_deg",
    "pitch_deg",
    "yaw_deg",
    "converged",
    "horizon_ok",
    "horizon_roll_deg",
    "horizon_pitch_deg",
    "horizon_yaw_deg",
    "horizon_cost",
    "mpp_roll_deg",
    "mpp_pitch_deg",
    "mpp_yaw_deg",
    "mpp_cost",
    "pvg_roll_deg",
    "pvg_pitch_deg",
    "pvg_yaw_deg",
    "pvg_cost",
];

pub fn write_estimates<W: Write>(out: W, records: &[EstimateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER)?;
    for r in records {
        let [roll, pitch, yaw] = r.rotation.to_rpy().to_degrees();
        let mut row = vec![
            r.frame_id.to_string(),
            fmt_f(roll),
            fmt_f(pitch),
            fmt_f(yaw),
            r.converged.to_string(),
            r.horizon_ok.to_string(),
        ];
        for (rpy, cost) in &r.stages {
            row.extend(rpy.to_degrees().map(fmt_f));
            row.push(fmt_f(*cost));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: impl AsRef<Path>) -> Result<Vec<EstimateRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in csv_reader(&text).records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.get(0) == Some("frame_id") {
            continue;
        }
        if rec.len() != ESTIMATE_HEADER.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, got {}", ESTIMATE_HEADER.len(), rec.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            if rec[k].is_empty() {
                return Ok(f64::NAN);
            }
            rec[k]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad {} {:?}", ESTIMATE_HEADER[k], &rec[k])))
        };
        let flag = |k: usize| -> Result<bool> {
            rec[k]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad {} {:?}", ESTIMATE_HEADER[k], &rec[k])))
        };
        let frame_id = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad frame id {:?}", &rec[0])))?;
        let rotation = rpy_to_rotation(EulerRPY::from_degrees(num(1)?, num(2)?, num(3)?));
        let stage = |base: usize| -> Result<(EulerRPY, f64)> {
            Ok((
                EulerRPY::from_degrees(num(base)?, num(base + 1)?, num(base + 2)?),
                num(base + 3)?,
            ))
        };
        out.push(EstimateRecord {
            frame_id,
            rotation,
            converged: flag(4)?,
            horizon_ok: flag(5)?,
            stages: [stage(6)?, stage(10)?, stage(14)?],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameError {
    pub frame_id: u64,
    pub normal_err_deg: Option<f64>,
    pub rot_err_deg: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub reference_id: u64,
    pub success_threshold_deg: f64,
    pub frames: Vec<FrameError>,
    pub mean_normal_err_deg: f64,
    pub median_normal_err_deg: f64,
    pub mean_rot_err_deg: f64,
    pub median_rot_err_deg: f64,
    pub success_rate: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_id", "normal_err_deg", "rot_err_deg", "converged"])?;
        for f in &self.frames {
            w.write_record(&[
                f.frame_id.to_string(),
                f.normal_err_deg.map_or(String::new(), fmt_f),
                fmt_f(f.rot_err_deg),
                f.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "reference frame:        {}", self.reference_id)?;
        writeln!(f, "frames:                 {}", self.frames.len())?;
        writeln!(f, "mean normal error:      {:.4} deg", self.mean_normal_err_deg)?;
        writeln!(f, "median normal error:    {:.4} deg", self.median_normal_err_deg)?;
        writeln!(f, "mean rotation error:    {:.4} deg", self.mean_rot_err_deg)?;
        writeln!(f, "median rotation error:  {:.4} deg", self.median_rot_err_deg)?;
        writeln!(
            f,
            "success rate (< {} deg): {:.4}",
            self.success_threshold_deg, self.success_rate
        )
    }
}

/// Scores estimates against ground truth.
///
/// Ground truth is made relative to the reference frame,
/// `R_gt,ref^T R_gt,t`, before comparing with the estimates. Normal errors
/// compare the horizon-stage normal with `R_gt,t^T z`.
pub fn evaluate_estimates(
    estimates: &[EstimateRecord],
    gt: &[GroundTruthRecord],
    ref_id: u64,
    success_deg: f64,
) -> Result<EvalReport> {
    let by_id: BTreeMap<u64, &GroundTruthRecord> = gt.iter().map(|g| (g.frame_id, g)).collect();
    let gt_ref = by_id.get(&ref_id).ok_or(Error::MissingReference(ref_id))?;
    let to_ref = gt_ref.rotation.transpose();
    let mut frames = Vec::with_capacity(estimates.len());
    for e in estimates {
        let g = by_id.get(&e.frame_id).ok_or_else(|| {
            Error::GroundTruthMismatch(format!("no ground truth for frame {}", e.frame_id))
        })?;
        let relative = to_ref * g.rotation;
        frames.push(FrameError {
            frame_id: e.frame_id,
            normal_err_deg: e
                .horizon_normal()
                .map(|n| normal_angle_error(&n, &g.horizon_normal())),
            rot_err_deg: rotation_angle_error(&relative, &e.rotation),
            converged: e.converged,
        });
    }
    let normal: Vec<f64> = frames.iter().filter_map(|f| f.normal_err_deg).collect();
    let rot: Vec<f64> = frames.iter().map(|f| f.rot_err_deg).collect();
    let successes = rot.iter().filter(|&&e| e < success_deg).count();
    Ok(EvalReport {
        reference_id: ref_id,
        success_threshold_deg: success_deg,
        mean_normal_err_deg: mean(&normal),
        median_normal_err_deg: median(&normal),
        mean_rot_err_deg: mean(&rot),
        median_rot_err_deg: median(&rot),
        success_rate: if rot.is_empty() {
            0.0
        } else {
            successes as f64 / rot.len() as f64
        },
        frames,
    })
}

/// Rotates a frame into the reference orientation given its estimate.
pub fn stabilize(frame: &EquirectImage, estimate: &RotationSO3) -> EquirectImage {
    rotate_equirect(frame, estimate)
}

/// Result of running and scoring a whole sequence.
pub struct SequenceOutcome {
    pub estimates: Vec<AttitudeEstimate>,
    /// Present when ground truth was supplied.
    pub report: Option<EvalReport>,
    /// Stabilized frames, produced only without ground truth.
    pub stabilized: Vec<(u64, EquirectImage)>,
}

/// Runs the pipeline on every frame and scores it. With empty ground truth
/// the frames are stabilized instead.
pub fn evaluate_sequence(
    frames: &[FrameRef],
    source: &dyn HeatmapSource,
    gt: &[GroundTruthRecord],
    ref_id: u64,
    success_deg: f64,
    cfg: &PipelineConfig,
) -> Result<SequenceOutcome> {
    if !gt.is_empty() {
        let ids: std::collections::BTreeSet<u64> = gt.iter().map(|g| g.frame_id).collect();
        if let Some(f) = frames.iter().find(|f| !ids.contains(&f.id)) {
            return Err(Error::GroundTruthMismatch(format!(
                "no ground truth for frame {}",
                f.id
            )));
        }
    }
    let estimates = estimate_sequence(frames, source, ref_id, cfg)?;
    if gt.is_empty() {
        let mut stabilized = Vec::with_capacity(frames.len());
        for (f, e) in frames.iter().zip(&estimates) {
            stabilized.push((f.id, stabilize(&EquirectImage::load(&f.path)?, &e.rotation)));
        }
        return Ok(SequenceOutcome {
            estimates,
            report: None,
            stabilized,
        });
    }
    let records: Vec<EstimateRecord> = estimates.iter().map(EstimateRecord::from).collect();
    let report = evaluate_estimates(&records, gt, ref_id, success_deg)?;
    Ok(SequenceOutcome {
        estimates,
        report: Some(report),
        stabilized: Vec::new(),
    })
}
