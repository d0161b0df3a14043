//! Mixture of photometric potentials (MPP) and yaw-only alignment.
//!
//! An MPP places one lobe on every icosphere vertex, weighted by the image
//! brightness seen there:
//!
//! ```text
//! G(x) = sum_i w_i * exp((x . c_i - 1) / lambda^2)
//! ```
//!
//! All lobes share `lambda`, which controls how smooth the alignment cost
//! is. Two models are compared by the sum of squared differences of their
//! values over the reference model's lobe centers.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::icosphere::IcosphereGrid;
use crate::panorama::EquirectImage;
use crate::sphere::{wrap_angle, EulerRPY, RotationSO3};

pub const DEFAULT_LEVEL: u32 = 3;
pub const DEFAULT_LAMBDA: f64 = 0.325;
/// Lobe contributions below this factor are skipped.
const KERNEL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct MppModel {
    level: u32,
    centers: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    lambda: f64,
    /// Lowest kernel exponent still summed; `-inf` sums everything.
    min_exponent: f64,
    /// `G(c_k)` at the model's own centers.
    self_values: Vec<f64>,
}

fn kernel_sum(
    x: &Vector3<f64>,
    centers: &[Vector3<f64>],
    weights: &[f64],
    inv_lambda_sq: f64,
    min_exponent: f64,
) -> f64 {
    let mut g = 0.0;
    for (c, w) in centers.iter().zip(weights) {
        let e = (x.dot(c) - 1.0) * inv_lambda_sq;
        if e >= min_exponent {
            g += w * e.exp();
        }
    }
    g
}

impl MppModel {
    pub fn from_weights(grid: &IcosphereGrid, weights: Vec<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda_g must be > 0, got {lambda}")));
        }
        if weights.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let mut model = Self {
            level: grid.level(),
            centers: grid.vertices().iter().map(|d| *d.as_vector()).collect(),
            weights,
            lambda,
            min_exponent: KERNEL_FLOOR.ln(),
            self_values: Vec::new(),
        };
        model.refresh_self_values();
        Ok(model)
    }

    fn refresh_self_values(&mut self) {
        let inv = self.inv_lambda_sq();
        self.self_values = self
            .centers
            .iter()
            .map(|x| kernel_sum(x, &self.centers, &self.weights, inv, self.min_exponent))
            .collect();
    }

    /// Same model with every lobe summed, no matter how small.
    pub fn with_full_kernel(mut self) -> Self {
        self.min_exponent = f64::NEG_INFINITY;
        self.refresh_self_values();
        self
    }

    /// The model seen from a frame rotated by `q`: `G'(y) = G(q^T y)`.
    pub fn rotated(&self, q: &RotationSO3) -> Self {
        let m = q.matrix();
        Self {
            centers: self.centers.iter().map(|c| m * c).collect(),
            ..self.clone()
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[Vector3<f64>] {
        &self.centers
    }

    fn inv_lambda_sq(&self) -> f64 {
        1.0 / (self.lambda * self.lambda)
    }

    fn check_compatible(&self, other: &MppModel) -> Result<()> {
        if self.level != other.level
            || self.centers.len() != other.centers.len()
            || self.lambda != other.lambda
        {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// Lobe weights are the bilinear brightness at each vertex.
pub fn build_mpp(img: &EquirectImage, grid: &IcosphereGrid, lambda: f64) -> Result<MppModel> {
    let weights = grid
        .vertices()
        .iter()
        .map(|v| img.sample_direction(v))
        .collect();
    MppModel::from_weights(grid, weights, lambda)
}

pub fn mpp_value(g: &MppModel, x: &crate::sphere::Direction) -> f64 {
    kernel_sum(
        x.as_vector(),
        &g.centers,
        &g.weights,
        g.inv_lambda_sq(),
        g.min_exponent,
    )
}

/// `sum_k (Gref(x_k) - Greq(R^T x_k))^2` over the reference centers `x_k`.
pub fn mpp_ssd_cost(g_ref: &MppModel, g_req: &MppModel, r: &RotationSO3) -> Result<f64> {
    g_ref.check_compatible(g_req)?;
    let inv = g_req.inv_lambda_sq();
    let m = r.matrix();
    let mut cost = 0.0;
    for (x, gr) in g_ref.centers.iter().zip(&g_ref.self_values) {
        let y = m.tr_mul(x);
        let d = gr - kernel_sum(&y, &g_req.centers, &g_req.weights, inv, g_req.min_exponent);
        cost += d * d;
    }
    Ok(cost)
}

/// Cost and its first two derivatives along yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawCost {
    pub cost: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Request lobes tilted by the fixed roll and pitch, ready for yaw scans.
struct YawProblem<'a> {
    g_ref: &'a MppModel,
    g_req: &'a MppModel,
    tilted: Vec<Vector3<f64>>,
}

impl<'a> YawProblem<'a> {
    fn new(g_ref: &'a MppModel, g_req: &'a MppModel, roll: f64, pitch: f64) -> Result<Self> {
        g_ref.check_compatible(g_req)?;
        let b = RotationSO3::ry(pitch) * RotationSO3::rx(roll);
        let m = b.matrix();
        Ok(Self {
            g_ref,
            g_req,
            tilted: g_req.centers.iter().map(|c| m * c).collect(),
        })
    }

    /// With `a_i = Rz(psi) u_i`, the kernel argument `x . a_i` is
    /// `cos(psi) P + sin(psi) Q + Z` for per-pair constants P, Q, Z.
    fn eval(&self, psi: f64, derivatives: bool) -> YawCost {
        let inv = self.g_req.inv_lambda_sq();
        let min_e = self.g_req.min_exponent;
        let (s, c) = psi.sin_cos();
        let rotated: Vec<Vector3<f64>> = self
            .tilted
            .iter()
            .map(|u| Vector3::new(c * u.x - s * u.y, s * u.x + c * u.y, u.z))
            .collect();
        let mut out = YawCost {
            cost: 0.0,
            d1: 0.0,
            d2: 0.0,
        };
        for (x, gr) in self.g_ref.centers.iter().zip(&self.g_ref.self_values) {
            let (mut g, mut g1, mut g2) = (0.0, 0.0, 0.0);
            for (a, w) in rotated.iter().zip(&self.g_req.weights) {
                let dot = x.dot(a);
                let e = (dot - 1.0) * inv;
                if e < min_e {
                    continue;
                }
                let k = w * e.exp();
                g += k;
                if derivatives {
                    // d/dpsi of x . Rz(psi) u, and the second derivative
                    let s1 = x.y * a.x - x.x * a.y;
                    let s2 = -(x.x * a.x + x.y * a.y);
                    g1 += k * s1 * inv;
                    g2 += k * (s1 * s1 * inv * inv + s2 * inv);
                }
            }
            let r = gr - g;
            out.cost += r * r;
            if derivatives {
                out.d1 += -2.0 * r * g1;
                out.d2 += 2.0 * (g1 * g1 - r * g2);
            }
        }
        out
    }
}

/// Yaw cost `C(psi)` with `R(psi) = Rz(psi) Ry(pitch) Rx(roll)`, plus its
/// analytic first and second derivatives.
pub fn yaw_cost(
    g_ref: &MppModel,
    g_req: &MppModel,
    roll: f64,
    pitch: f64,
    yaw: f64,
) -> Result<YawCost> {
    Ok(YawProblem::new(g_ref, g_req, roll, pitch)?.eval(yaw, true))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawEstimate {
    pub yaw: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawOptions {
    /// Also start from `yaw0 + 90, 180, 270` degrees.
    pub multistart: bool,
    pub max_iters: usize,
    pub step_tol: f64,
}

impl Default for YawOptions {
    fn default() -> Self {
        Self {
            multistart: true,
            max_iters: 100,
            step_tol: 1e-5,
        }
    }
}

const CURVATURE_FLOOR: f64 = 1e-12;
const MAX_HALVINGS: usize = 20;
/// Largest Newton step; keeps negative-curvature steps local.
const MAX_STEP: f64 = 0.5;

fn newton_from(problem: &YawProblem<'_>, start: f64, opts: &YawOptions) -> YawEstimate {
    let mut psi = wrap_angle(start);
    let mut cur = problem.eval(psi, true);
    let initial = cur.cost;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut step = (-cur.d1 / cur.d2.max(CURVATURE_FLOOR)).clamp(-MAX_STEP, MAX_STEP);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = problem.eval(psi + step, false);
            if trial.cost < cur.cost {
                accepted = Some(step);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(step) => {
                psi = wrap_angle(psi + step);
                cur = problem.eval(psi, true);
                if step.abs() < opts.step_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // no decrease along the Newton direction: stationary to
                // within the halving resolution
                converged = step.abs() < opts.step_tol || cur.d1 == 0.0;
                break;
            }
        }
    }
    YawEstimate {
        yaw: psi,
        final_cost: cur.cost,
        iterations,
        converged: converged && cur.cost <= initial,
    }
}

/// Damped Newton on the yaw angle with roll and pitch held fixed.
///
/// Never returns a cost above the cost at `yaw0`. When no start manages to
/// converge the best one is returned with `converged = false`.
pub fn optimize_yaw(
    g_ref: &MppModel,
    g_req: &MppModel,
    roll_pitch: (f64, f64),
    yaw0: f64,
    opts: &YawOptions,
) -> Result<YawEstimate> {
    let problem = YawProblem::new(g_ref, g_req, roll_pitch.0, roll_pitch.1)?;
    let yaw0 = wrap_angle(yaw0);
    let offsets: &[f64] = if opts.multistart {
        &[0.0, 0.5, 1.0, 1.5]
    } else {
        &[0.0]
    };
    let mut best: Option<YawEstimate> = None;
    let mut total_iters = 0;
    for k in offsets {
        let est = newton_from(&problem, yaw0 + k * std::f64::consts::PI, opts);
        total_iters += est.iterations;
        if best.is_none_or(|b| est.final_cost < b.final_cost) {
            best = Some(est);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iters;
    Ok(best)
}

/// Rotation used by the yaw search.
pub fn yaw_rotation(roll: f64, pitch: f64, yaw: f64) -> RotationSO3 {
    crate::sphere::rpy_to_rotation(EulerRPY::new(roll, pitch, yaw))
}
