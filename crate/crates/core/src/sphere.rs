//! Unit-sphere geometry shared by every stage of the gyroscope.
//!
//! Frames: x forward, y left, z up. A [`RotationSO3`] maps camera
//! directions to world directions (`d_world = R * d_camera`). Euler angles
//! follow the yaw-pitch-roll sequence `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//!
//! Equirectangular pixel `(u, v)` covers longitude `phi = 2*pi*(u+0.5)/W - pi`
//! and latitude `theta = pi/2 - pi*(v+0.5)/H`. Row 0 is the top (up) row and
//! longitude grows toward +y.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub const UP: Direction = Direction(Vector3::new(0.0, 0.0, 1.0));
    pub const FORWARD: Direction = Direction(Vector3::new(1.0, 0.0, 0.0));

    /// Normalizes `v`; returns `None` for a (near) zero vector.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n.is_finite() && n > 1e-300 {
            Some(Self(v / n))
        } else {
            None
        }
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Option<Self> {
        Self::new(Vector3::new(x, y, z))
    }

    /// Wraps a vector that is already unit length.
    pub(crate) fn new_unchecked(v: Vector3<f64>) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-6, "non-unit direction {v:?}");
        Self(v)
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    /// Angle to `other` in radians, stable near 0 and pi.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }

    pub fn antipode(&self) -> Direction {
        Direction(-self.0)
    }
}

impl From<Unit<Vector3<f64>>> for Direction {
    fn from(u: Unit<Vector3<f64>>) -> Self {
        Direction(u.into_inner())
    }
}

/// Roll, pitch and yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerRPY {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerRPY {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSO3(Matrix3<f64>);

impl RotationSO3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and orientation to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho <= UNIT_TOL && (m.determinant() - 1.0).abs() <= UNIT_TOL {
            Ok(Self(m))
        } else {
            Err(Error::NotARotation)
        }
    }

    /// Rotation by `angle` radians about `axis` (right-hand rule).
    pub fn from_axis_angle(axis: &Direction, angle: f64) -> Self {
        Self(*Rotation3::from_axis_angle(&Unit::new_unchecked(axis.0), angle).matrix())
    }

    /// Exponential map of a rotation vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        Self(*Rotation3::new(*omega).matrix())
    }

    /// Rotation vector (axis times angle) of this rotation.
    pub fn log(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.0).scaled_axis()
    }

    pub fn rx(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn ry(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rz(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, d: &Direction) -> Direction {
        Direction(self.0 * d.0)
    }

    /// Applies the inverse rotation.
    pub fn apply_inverse(&self, d: &Direction) -> Direction {
        Direction(self.0.tr_mul(&d.0))
    }

    pub fn to_rpy(&self) -> EulerRPY {
        rotation_to_rpy(self)
    }

    pub fn from_rpy(e: EulerRPY) -> Self {
        rpy_to_rotation(e)
    }
}

impl Mul for RotationSO3 {
    type Output = RotationSO3;

    fn mul(self, rhs: RotationSO3) -> RotationSO3 {
        RotationSO3(self.0 * rhs.0)
    }
}

impl Mul<&RotationSO3> for &RotationSO3 {
    type Output = RotationSO3;

    fn mul(self, rhs: &RotationSO3) -> RotationSO3 {
        RotationSO3(self.0 * rhs.0)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if height == 0 || width != 2 * height {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

/// Direction seen by the (fractional) pixel coordinate `(u, v)`.
pub fn equirect_to_direction(u: f64, v: f64, width: usize, height: usize) -> Result<Direction> {
    check_dims(width, height)?;
    Ok(equirect_to_direction_unchecked(u, v, width, height))
}

#[inline]
pub(crate) fn equirect_to_direction_unchecked(
    u: f64,
    v: f64,
    width: usize,
    height: usize,
) -> Direction {
    let phi = 2.0 * PI * (u + 0.5) / width as f64 - PI;
    let theta = (FRAC_PI_2 - PI * (v + 0.5) / height as f64).clamp(-FRAC_PI_2, FRAC_PI_2);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Direction(Vector3::new(ct * cp, ct * sp, st))
}

/// Inverse of [`equirect_to_direction`]; `u` wraps into `[0, W)` and `v` is
/// clamped to `[0, H)`.
pub fn direction_to_equirect(d: &Direction, width: usize, height: usize) -> Result<(f64, f64)> {
    check_dims(width, height)?;
    Ok(direction_to_equirect_unchecked(d.as_vector(), width, height))
}

/// Projection of an arbitrary nonzero vector; only its direction matters.
#[inline]
pub(crate) fn direction_to_equirect_unchecked(
    d: &Vector3<f64>,
    width: usize,
    height: usize,
) -> (f64, f64) {
    let w = width as f64;
    let h = height as f64;
    let phi = d.y.atan2(d.x);
    let theta = d.z.atan2(d.x.hypot(d.y));
    let mut u = (phi + PI) * w / (2.0 * PI) - 0.5;
    if u < 0.0 {
        u += w;
    }
    if u >= w {
        u -= w;
    }
    let v = ((FRAC_PI_2 - theta) * h / PI - 0.5).clamp(0.0, h - f64::EPSILON * h);
    (u, v)
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rpy_to_rotation(e: EulerRPY) -> RotationSO3 {
    RotationSO3::rz(e.yaw) * RotationSO3::ry(e.pitch) * RotationSO3::rx(e.roll)
}

/// Inverse of [`rpy_to_rotation`]. At gimbal lock roll is set to zero and
/// the remaining freedom goes to yaw.
pub fn rotation_to_rpy(r: &RotationSO3) -> EulerRPY {
    let m = &r.0;
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let cp = m[(2, 1)].hypot(m[(2, 2)]);
    if cp < 1e-12 {
        let pitch = if sp > 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return EulerRPY::new(0.0, pitch, wrap_angle(yaw));
    }
    let pitch = sp.atan2(cp);
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    EulerRPY::new(wrap_angle(roll), pitch, wrap_angle(yaw))
}

/// Angle of the relative rotation `Ra * Rb^T`, in `[0, pi]`.
///
/// Equal to `arccos((trace(Ra Rb^T) - 1) / 2)`; evaluated through the
/// skew-symmetric part as well so it stays accurate near 0 and pi.
pub fn geodesic_angle(ra: &RotationSO3, rb: &RotationSO3) -> f64 {
    let m = ra.0 * rb.0.transpose();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn forward_and_backward_pixels() {
        let d = equirect_to_direction(1.5, 0.5, 4, 2).unwrap();
        assert!(close(d.as_vector(), &Vector3::new(1.0, 0.0, 0.0), 1e-12));
        let d = equirect_to_direction(3.5, 0.5, 4, 2).unwrap();
        assert!(close(d.as_vector(), &Vector3::new(-1.0, 0.0, 0.0), 1e-12));
        let (u, v) = direction_to_equirect(&Direction::FORWARD, 4, 2).unwrap();
        assert!((u - 1.5).abs() < 1e-12 && (v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn north_pole_clamps_to_top_row() {
        let (_, v) = direction_to_equirect(&Direction::UP, 4, 2).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(
            equirect_to_direction(0.0, 0.0, 5, 2),
            Err(Error::InvalidDimensions { .. })
        ));
        assert!(direction_to_equirect(&Direction::UP, 4, 4).is_err());
    }

    #[test]
    fn pure_yaw_turns_forward_to_left() {
        let r = rpy_to_rotation(EulerRPY::new(0.0, 0.0, FRAC_PI_2));
        let d = r.apply(&Direction::FORWARD);
        assert!(close(d.as_vector(), &Vector3::new(0.0, 1.0, 0.0), 1e-12));
        assert_eq!(rpy_to_rotation(EulerRPY::default()), RotationSO3::identity());
    }

    #[test]
    fn rpy_of_simple_rotations() {
        let e = rotation_to_rpy(&RotationSO3::identity());
        assert_eq!((e.roll, e.pitch, e.yaw), (0.0, 0.0, 0.0));
        let e = rotation_to_rpy(&RotationSO3::rx(0.3));
        assert!((e.roll - 0.3).abs() < 1e-12 && e.pitch.abs() < 1e-12 && e.yaw.abs() < 1e-12);
        let e = rotation_to_rpy(&RotationSO3::ry(FRAC_PI_2));
        assert_eq!(e.roll, 0.0);
        assert!((e.pitch - FRAC_PI_2).abs() < 1e-12);
        assert!(e.yaw.abs() < 1e-12);
    }

    #[test]
    fn gimbal_lock_preserves_rotation() {
        for &p in &[FRAC_PI_2, -FRAC_PI_2] {
            let r = rpy_to_rotation(EulerRPY::new(0.4, p, -1.1));
            let e = rotation_to_rpy(&r);
            assert_eq!(e.roll, 0.0);
            assert!(geodesic_angle(&rpy_to_rotation(e), &r) < 1e-9);
        }
    }

    #[test]
    fn geodesic_single_axis() {
        let a = geodesic_angle(&RotationSO3::rz(10f64.to_radians()), &RotationSO3::identity());
        assert!((a.to_degrees() - 10.0).abs() < 1e-12);
        let r = rpy_to_rotation(EulerRPY::new(0.2, -0.7, 2.9));
        assert!(geodesic_angle(&r, &r) < 1e-15);
        let a = geodesic_angle(&RotationSO3::rx(PI), &RotationSO3::identity());
        assert!((a - PI).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-0.2) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn from_matrix_validates() {
        assert!(RotationSO3::from_matrix(Matrix3::identity() * 2.0).is_err());
        assert!(RotationSO3::from_matrix(-Matrix3::<f64>::identity()).is_err());
        assert!(RotationSO3::from_matrix(*RotationSO3::rz(0.3).matrix()).is_ok());
    }
}
