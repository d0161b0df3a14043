//! Photometric visual gyroscope: direct brightness on a fine icosphere,
//! refined over the full rotation by Levenberg-Marquardt.
//!
//! Residuals are `r_k(R) = ref(x_k) - cur(R^T x_k)` at every vertex `x_k`.
//! Rotations are updated on the left, `R <- exp([w]) R`, which gives the
//! Jacobian row `dr_k/dw = x_k x (R g_k)` where `g_k` is the brightness
//! gradient of `cur` at `R^T x_k`, taken in the image plane and lifted
//! through the projection Jacobian.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::icosphere::{build_icosphere, IcosphereGrid};
use crate::panorama::{BilinearTap, EquirectImage};
use crate::sphere::{direction_to_equirect_unchecked, Direction, RotationSO3};

pub const DEFAULT_LEVEL: u32 = 5;

/// Brightness sampled at every vertex of an icosphere.
#[derive(Debug, Clone)]
pub struct SphericalBrightness {
    pub level: u32,
    pub values: Vec<f64>,
}

/// `value_k = img(R^T x_k)`.
pub fn sample_spherical(img: &EquirectImage, grid: &IcosphereGrid, r: &RotationSO3) -> SphericalBrightness {
    SphericalBrightness {
        level: grid.level(),
        values: grid
            .vertices()
            .iter()
            .map(|x| img.sample_direction(&r.apply_inverse(x)))
            .collect(),
    }
}

/// Brightness gradient with respect to the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalGradient {
    pub vector: Vector3<f64>,
    /// Set within one pixel of a pole, where the gradient is reported as zero.
    pub degenerate: bool,
}

/// `(du/dy, dv/dy)` of the equirectangular projection at unit `y`.
#[inline]
fn projection_jacobian(y: &Vector3<f64>, width: usize, height: usize) -> (Vector3<f64>, Vector3<f64>) {
    let rho_sq = y.x * y.x + y.y * y.y;
    let rho = rho_sq.sqrt();
    let su = width as f64 / (2.0 * PI);
    let sv = -(height as f64) / PI;
    let dphi = Vector3::new(-y.y, y.x, 0.0) / rho_sq;
    let dtheta = Vector3::new(-y.x * y.z, -y.y * y.z, rho_sq) / rho;
    (dphi * su, dtheta * sv)
}

#[inline]
fn near_pole(v: f64, height: usize) -> bool {
    v < 1.0 || v > (height as f64) - 2.0
}

/// Gradient of `img` brightness at `R^T x`, from central differences over
/// one pixel chained with the projection Jacobian. The result is tangent
/// to the sphere at `R^T x`.
pub fn spherical_gradient(img: &EquirectImage, x: &Direction, r: &RotationSO3) -> SphericalGradient {
    let y = r.apply_inverse(x);
    let (u, v) = img.project(&y);
    if near_pole(v, img.height()) {
        return SphericalGradient {
            vector: Vector3::zeros(),
            degenerate: true,
        };
    }
    let gu = (img.sample_bilinear(u + 1.0, v) - img.sample_bilinear(u - 1.0, v)) / 2.0;
    let gv = (img.sample_bilinear(u, v + 1.0) - img.sample_bilinear(u, v - 1.0)) / 2.0;
    let (du, dv) = projection_jacobian(y.as_vector(), img.width(), img.height());
    SphericalGradient {
        vector: du * gu + dv * gv,
        degenerate: false,
    }
}

/// Brightness plus central-difference gradients, interleaved per pixel so
/// one bilinear stencil yields value and gradient together.
struct GradientImage {
    width: usize,
    height: usize,
    /// `[value, d/du, d/dv]` per pixel.
    texels: Vec<[f64; 3]>,
}

impl GradientImage {
    fn new(img: &EquirectImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let px = img.intensity();
        let mut texels = Vec::with_capacity(w * h);
        for v in 0..h {
            let up = v.saturating_sub(1);
            let down = (v + 1).min(h - 1);
            for u in 0..w {
                let left = if u == 0 { w - 1 } else { u - 1 };
                let right = if u + 1 == w { 0 } else { u + 1 };
                texels.push([
                    px[v * w + u],
                    (px[v * w + right] - px[v * w + left]) / 2.0,
                    (px[down * w + u] - px[up * w + u]) / 2.0,
                ]);
            }
        }
        Self {
            width: w,
            height: h,
            texels,
        }
    }

    #[inline]
    fn value(&self, y: &Vector3<f64>) -> Option<f64> {
        let (u, v) = direction_to_equirect_unchecked(y, self.width, self.height);
        if near_pole(v, self.height) {
            return None;
        }
        let tap = BilinearTap::new(u, v, self.width, self.height);
        Some(tap.apply_texel(&self.texels)[0])
    }

    /// Brightness and direction gradient at unit `y`; `None` near a pole.
    /// Same projection as `direction_to_equirect`, sharing `rho` with the
    /// projection Jacobian.
    #[inline]
    fn sample(&self, y: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let (wf, hf) = (self.width as f64, self.height as f64);
        let rho_sq = y.x * y.x + y.y * y.y;
        let rho = rho_sq.sqrt();
        let theta = y.z.atan2(rho);
        let v = (FRAC_PI_2 - theta) * hf / PI - 0.5;
        if near_pole(v, self.height) {
            return None;
        }
        let mut u = (y.y.atan2(y.x) + PI) * wf / (2.0 * PI) - 0.5;
        if u < 0.0 {
            u += wf;
        }
        if u >= wf {
            u -= wf;
        }
        let tap = BilinearTap::new_interior(u, v, self.width);
        let [value, gu, gv] = tap.apply_texel(&self.texels);
        let su = gu * wf / (2.0 * PI * rho_sq);
        let sv = -gv * hf / (PI * rho);
        let grad = Vector3::new(
            -y.y * su - y.x * y.z * sv,
            y.x * su - y.y * y.z * sv,
            rho_sq * sv,
        );
        Some((value, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub level: u32,
    pub max_iters: usize,
    pub step_tol: f64,
    pub lambda_init: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            level: DEFAULT_LEVEL,
            max_iters: 100,
            step_tol: 1e-6,
            lambda_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineResult {
    pub rotation: RotationSO3,
    pub final_cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Residuals and Jacobian rows at one rotation, one entry per vertex.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<Vector3<f64>>,
    /// False for vertices dropped by the pole guard.
    pub valid: Vec<bool>,
    pub cost: f64,
}

/// Reference brightness on the icosphere, reusable across frames.
#[derive(Debug, Clone)]
pub struct PvgAligner {
    grid: IcosphereGrid,
    reference: Vec<f64>,
    width: usize,
    height: usize,
    cfg: RefineConfig,
}

/// Current frame prepared for repeated evaluation.
pub struct PreparedFrame(GradientImage);

impl PvgAligner {
    pub fn new(reference: &EquirectImage, cfg: RefineConfig) -> Result<Self> {
        let grid = build_icosphere(cfg.level)?;
        let values = sample_spherical(reference, &grid, &RotationSO3::identity()).values;
        Ok(Self {
            grid,
            reference: values,
            width: reference.width(),
            height: reference.height(),
            cfg,
        })
    }

    pub fn grid(&self) -> &IcosphereGrid {
        &self.grid
    }

    pub fn config(&self) -> &RefineConfig {
        &self.cfg
    }

    pub fn prepare(&self, cur: &EquirectImage) -> Result<PreparedFrame> {
        let probe = EquirectImage::constant(self.width, self.height, 0.0)?;
        probe.same_dimensions(cur)?;
        Ok(PreparedFrame(GradientImage::new(cur)))
    }

    pub fn linearize(&self, frame: &PreparedFrame, r: &RotationSO3) -> Linearization {
        let n = self.grid.len();
        let mut lin = Linearization {
            residuals: vec![0.0; n],
            jacobian: vec![Vector3::zeros(); n],
            valid: vec![false; n],
            cost: 0.0,
        };
        let m = r.matrix();
        for (k, x) in self.grid.vertices().iter().enumerate() {
            let x = x.as_vector();
            let y = m.tr_mul(x);
            if let Some((value, grad)) = frame.0.sample(&y) {
                let res = self.reference[k] - value;
                lin.residuals[k] = res;
                lin.jacobian[k] = x.cross(&(m * grad));
                lin.valid[k] = true;
                lin.cost += res * res;
            }
        }
        lin
    }

    /// Photometric cost `sum_k (ref(x_k) - cur(R^T x_k))^2`.
    pub fn cost(&self, frame: &PreparedFrame, r: &RotationSO3) -> f64 {
        let m = r.matrix();
        let mut cost = 0.0;
        for (k, x) in self.grid.vertices().iter().enumerate() {
            if let Some(value) = frame.0.value(&m.tr_mul(x.as_vector())) {
                let res = self.reference[k] - value;
                cost += res * res;
            }
        }
        cost
    }

    /// `J^T J`, `J^T r` and the cost in one pass without storing rows.
    /// Rows are built in the camera frame, `y x g`, and rotated once at the
    /// end since `x x (R g) = R (y x g)`.
    fn normal_equations(&self, frame: &PreparedFrame, r: &RotationSO3) -> NormalEquations {
        let m = r.matrix();
        let mut h = Matrix3::zeros();
        let mut b = Vector3::zeros();
        let mut cost = 0.0;
        for (x, reference) in self.grid.vertices().iter().zip(&self.reference) {
            let y = m.tr_mul(x.as_vector());
            if let Some((value, grad)) = frame.0.sample(&y) {
                let res = reference - value;
                let j = y.cross(&grad);
                h += j * j.transpose();
                b += j * res;
                cost += res * res;
            }
        }
        NormalEquations {
            h: m * h * m.transpose(),
            b: m * b,
            cost,
        }
    }

    pub fn refine(&self, cur: &EquirectImage, r0: &RotationSO3) -> Result<RefineResult> {
        let frame = self.prepare(cur)?;
        Ok(self.refine_prepared(&frame, r0))
    }

    pub fn refine_prepared(&self, frame: &PreparedFrame, r0: &RotationSO3) -> RefineResult {
        let mut r = *r0;
        let mut cur = self.normal_equations(frame, &r);
        let initial_cost = cur.cost;
        let mut mu = self.cfg.lambda_init;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.cfg.max_iters {
            iterations += 1;
            let mut damped = cur.h;
            for i in 0..3 {
                damped[(i, i)] += mu * cur.h[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&(-cur.b))) else {
                mu *= 10.0;
                continue;
            };
            if delta.norm() < self.cfg.step_tol {
                converged = true;
                break;
            }
            let trial_r = RotationSO3::exp(&delta) * r;
            let trial = self.normal_equations(frame, &trial_r);
            if trial.cost < cur.cost {
                r = trial_r;
                cur = trial;
                mu = (mu / 10.0).max(1e-12);
            } else {
                mu *= 10.0;
            }
        }
        RefineResult {
            rotation: r,
            final_cost: cur.cost,
            initial_cost,
            iterations,
            converged,
        }
    }
}

struct NormalEquations {
    h: Matrix3<f64>,
    b: Vector3<f64>,
    cost: f64,
}

/// One-shot refinement of `cur` against `reference` starting at `r0`.
pub fn refine_rotation(
    reference: &EquirectImage,
    cur: &EquirectImage,
    r0: &RotationSO3,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    reference.same_dimensions(cur)?;
    PvgAligner::new(reference, *cfg)?.refine(cur, r0)
}
