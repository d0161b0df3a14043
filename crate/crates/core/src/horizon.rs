//! Roll and pitch from a horizon-line heat-map and a vertical vanishing
//! point heat-map.
//!
//! Both heat-maps are lifted onto the unit sphere. The vertical one gives a
//! rough up direction; the horizon one is fitted with a great circle by
//! RANSAC, discarding any hypothesis whose normal strays more than the
//! coherence gate from that up direction.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::panorama::EquirectImage;
use crate::sphere::{rpy_to_rotation, Direction, EulerRPY, RotationSO3};

/// Horizon-line and vertical-direction confidence maps of one frame.
#[derive(Debug, Clone)]
pub struct HeatMapPair {
    pub horizon: EquirectImage,
    pub vertical: EquirectImage,
}

impl HeatMapPair {
    pub fn new(horizon: EquirectImage, vertical: EquirectImage) -> Result<Self> {
        horizon.same_dimensions(&vertical)?;
        Ok(Self { horizon, vertical })
    }

    /// Reads `<stem>_horizon.png` and `<stem>_vertical.png` from `dir`.
    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        Self::new(
            EquirectImage::load(dir.join(format!("{stem}_horizon.png")))?,
            EquirectImage::load(dir.join(format!("{stem}_vertical.png")))?,
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        self.horizon.save(dir.join(format!("{stem}_horizon.png")))?;
        self.vertical.save(dir.join(format!("{stem}_vertical.png")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeightedSpherePoints {
    pub points: Vec<(Direction, f64)>,
}

impl WeightedSpherePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn total_weight(&self) -> f64 {
        self.points.iter().map(|(_, w)| w).sum()
    }
}

/// Great circle through the sphere center, oriented toward the vertical
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonPlane {
    pub normal: Direction,
    pub inlier_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_angle_deg: f64,
    pub min_inliers: f64,
    /// Coherence gate between a plane normal and the vertical estimate.
    pub gate_deg: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_angle_deg: 2.0,
            min_inliers: 0.3,
            gate_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonConfig {
    /// Pixels above `threshold * max` are lifted onto the sphere.
    pub threshold: f64,
    pub ransac: RansacConfig,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            ransac: RansacConfig::default(),
        }
    }
}

/// Lifts every pixel with confidence above `threshold * max` onto the sphere.
pub fn heatmap_to_sphere(hm: &EquirectImage, threshold: f64) -> Result<WeightedSpherePoints> {
    let max = hm.intensity().iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyHeatmap);
    }
    let cut = threshold * max;
    let w = hm.width();
    let points: Vec<_> = hm
        .intensity()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > cut)
        .map(|(i, &c)| (hm.direction_at((i % w) as f64, (i / w) as f64), c))
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyHeatmap);
    }
    Ok(WeightedSpherePoints { points })
}

/// Weighted mean of axial samples, folding antipodes onto the running mean.
/// The result is reported in the upper hemisphere.
pub fn estimate_vertical(pts: &WeightedSpherePoints) -> Result<Direction> {
    let seed = pts
        .points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyHeatmap)?;
    let (d0, w0) = pts.points[seed];
    let mut sum = d0.as_vector() * w0;
    for (i, (d, w)) in pts.points.iter().enumerate() {
        if i == seed {
            continue;
        }
        let v = d.as_vector();
        if v.dot(&sum) < 0.0 {
            sum -= v * *w;
        } else {
            sum += v * *w;
        }
    }
    if sum.norm() / pts.total_weight() < 1e-6 {
        return Err(Error::DegenerateMean);
    }
    let mean = Direction::new(sum).ok_or(Error::DegenerateMean)?;
    Ok(if mean.z() < 0.0 { mean.antipode() } else { mean })
}

fn orient(n: Direction, toward: &Direction) -> Direction {
    if n.dot(toward) < 0.0 {
        n.antipode()
    } else {
        n
    }
}

/// Smallest principal axis of the weighted scatter `sum w d d^T`.
fn fit_plane_normal(pts: &[(Direction, f64)], mask: &[bool]) -> Option<Direction> {
    let mut scatter = Matrix3::zeros();
    for ((d, w), _) in pts.iter().zip(mask).filter(|(_, &m)| m) {
        let v = d.as_vector();
        scatter += v * v.transpose() * *w;
    }
    let eig = SymmetricEigen::new(scatter);
    let k = eig.eigenvalues.imin();
    Direction::new(eig.eigenvectors.column(k).into_owned())
}

fn score(pts: &[(Direction, f64)], normal: &Direction, band: f64, mask: &mut [bool]) -> f64 {
    let mut total = 0.0;
    for ((d, w), m) in pts.iter().zip(mask.iter_mut()) {
        *m = d.dot(normal).abs() < band;
        if *m {
            total += w;
        }
    }
    total
}

/// Gated RANSAC great-circle fit.
///
/// Two-point hypotheses farther than `cfg.gate_deg` from `v_est` are
/// discarded before scoring. The best hypothesis (by inlier weight) is
/// refined by weighted least squares over its inliers, and the refit is
/// kept only while it stays inside the gate.
pub fn ransac_horizon_plane<R: Rng + ?Sized>(
    pts: &WeightedSpherePoints,
    v_est: &Direction,
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<HorizonPlane> {
    let n = pts.len();
    if n < 2 {
        return Err(Error::NoConsensus(format!("{n} points, need at least 2")));
    }
    let gate = cfg.gate_deg.to_radians();
    let band = cfg.inlier_angle_deg.to_radians().sin();
    let points = &pts.points;
    let mut mask = vec![false; n];
    let mut best: Option<(Direction, f64)> = None;

    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let cross = points[i].0.as_vector().cross(points[j].0.as_vector());
        let Some(normal) = Direction::new(cross).filter(|_| cross.norm() > 1e-9) else {
            continue;
        };
        let normal = orient(normal, v_est);
        if normal.angle_to(v_est) > gate {
            continue;
        }
        let s = score(points, &normal, band, &mut mask);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((normal, s));
        }
    }

    let (mut normal, mut inlier_weight) =
        best.ok_or_else(|| Error::NoConsensus("no hypothesis inside the coherence gate".into()))?;
    score(points, &normal, band, &mut mask);
    for _ in 0..3 {
        let Some(refit) = fit_plane_normal(points, &mask).map(|r| orient(r, v_est)) else {
            break;
        };
        if refit.angle_to(v_est) > gate {
            break;
        }
        let mut refit_mask = vec![false; n];
        let s = score(points, &refit, band, &mut refit_mask);
        if s <= 0.0 {
            break;
        }
        let settled = refit.angle_to(&normal) < 1e-12;
        normal = refit;
        inlier_weight = s;
        mask = refit_mask;
        if settled {
            break;
        }
    }

    let inlier_ratio = inlier_weight / pts.total_weight();
    if inlier_ratio < cfg.min_inliers {
        return Err(Error::NoConsensus(format!(
            "inlier ratio {inlier_ratio:.3} below {}",
            cfg.min_inliers
        )));
    }
    debug_assert!(normal.angle_to(v_est) <= gate + 1e-12);
    Ok(HorizonPlane {
        normal,
        inlier_ratio,
    })
}

/// Roll and pitch of a camera whose world-up direction, seen in the
/// camera frame, is `n`: `rpy_to_rotation(roll, pitch, 0)^T * z = n`.
pub fn rollpitch_from_normal(n: &Direction) -> Result<(f64, f64)> {
    if n.z() <= -1.0 + 1e-9 {
        return Err(Error::DegenerateDown);
    }
    let pitch = -n.x().clamp(-1.0, 1.0).asin();
    let roll = n.y().atan2(n.z());
    Ok((roll, pitch))
}

/// World up seen from a camera with the given roll and pitch.
pub fn normal_from_rollpitch(roll: f64, pitch: f64) -> Direction {
    rpy_to_rotation(EulerRPY::new(roll, pitch, 0.0)).apply_inverse(&Direction::UP)
}

/// Output of the full heat-map chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonAttitude {
    pub roll: f64,
    pub pitch: f64,
    pub vertical: Direction,
    pub plane: HorizonPlane,
}

pub fn estimate_attitude<R: Rng + ?Sized>(
    hm: &HeatMapPair,
    cfg: &HorizonConfig,
    rng: &mut R,
) -> Result<HorizonAttitude> {
    let vertical = estimate_vertical(&heatmap_to_sphere(&hm.vertical, cfg.threshold)?)?;
    let horizon = heatmap_to_sphere(&hm.horizon, cfg.threshold)?;
    let plane = ransac_horizon_plane(&horizon, &vertical, &cfg.ransac, rng)?;
    let (roll, pitch) = rollpitch_from_normal(&plane.normal)?;
    Ok(HorizonAttitude {
        roll,
        pitch,
        vertical,
        plane,
    })
}

/// Synthetic heat-maps of a panorama resampled by `rotate_equirect(_, r)`
/// from a gravity-aligned one: the horizon is the great circle with normal
/// `r * z`, the vertical map has blobs at `+-r * z`. Both use a Gaussian
/// falloff of width `sigma_deg`; uniform noise in `[-noise, noise]` is
/// added before clamping.
pub fn synth_heatmaps(
    r: &RotationSO3,
    width: usize,
    height: usize,
    sigma_deg: f64,
    noise: f64,
    seed: u64,
) -> Result<HeatMapPair> {
    let normal = r.apply(&Direction::UP);
    let two_sigma_sq = 2.0 * sigma_deg.to_radians().powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |x: f64| {
        if noise > 0.0 {
            (x + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
        } else {
            x
        }
    };
    let probe = EquirectImage::constant(width, height, 0.0)?;
    let mut horizon = Vec::with_capacity(width * height);
    let mut vertical = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = probe.direction_at(u as f64, v as f64);
            let dot = d.dot(&normal).clamp(-1.0, 1.0);
            let off_circle = dot.abs().asin();
            let off_pole = d.angle_to(&normal).min(d.angle_to(&normal.antipode()));
            horizon.push(jitter((-off_circle * off_circle / two_sigma_sq).exp()));
            vertical.push(jitter((-off_pole * off_pole / two_sigma_sq).exp()));
        }
    }
    HeatMapPair::new(
        EquirectImage::from_intensity(width, height, horizon)?,
        EquirectImage::from_intensity(width, height, vertical)?,
    )
}
