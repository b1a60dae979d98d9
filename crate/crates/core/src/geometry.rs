//! Planar rotations, yaw-only 3D rotations and the small vector helpers used
//! by the regressor.
//!
//! Every rotation in this crate is a rotation about the vertical axis. The
//! horizontal block is stored as a `(cos, sin)` pair and the vertical axis is
//! always left untouched.

use std::f64::consts::PI;
use std::ops::{Add, Sub};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this norm a `(cos, sin)` estimate carries no usable direction.
pub const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation estimate is degenerate (|(c, s)| = {norm:e})")]
    DegenerateRotation { norm: f64 },
}

/// An angle in radians. Odometry headings are cumulative, so the raw value is
/// never wrapped; use [`Angle::wrapped`] when a principal value is needed.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(pub f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Principal value in `(-pi, pi]`.
    pub fn wrapped(self) -> f64 {
        wrap_to_pi(self.0)
    }

    pub fn cos(self) -> f64 {
        self.0.cos()
    }

    pub fn sin(self) -> f64 {
        self.0.sin()
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle(self.0 + rhs.0)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle(self.0 - rhs.0)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_to_pi(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Position plus heading of a 4-DoF robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: Angle,
}

impl Pose4 {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose4 { x, y, z, yaw: Angle(yaw) }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.0.is_finite()
    }
}

/// A 2D rotation stored as its cosine and sine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarRotation {
    c: f64,
    s: f64,
}

impl Default for PlanarRotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PlanarRotation {
    pub const IDENTITY: PlanarRotation = PlanarRotation { c: 1.0, s: 0.0 };

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        PlanarRotation { c, s }
    }

    /// Projects a uniformly scaled rotation `(c_raw, s_raw)` back onto the
    /// unit circle, keeping its angle.
    pub fn norm_project(c_raw: f64, s_raw: f64) -> Result<Self, GeometryError> {
        let norm = c_raw.hypot(s_raw);
        if !(norm >= NORM_EPS) {
            return Err(GeometryError::DegenerateRotation { norm });
        }
        Ok(PlanarRotation { c: c_raw / norm, s: s_raw / norm })
    }

    pub fn cos(&self) -> f64 {
        self.c
    }

    pub fn sin(&self) -> f64 {
        self.s
    }

    pub fn angle(&self) -> f64 {
        self.s.atan2(self.c)
    }

    pub fn transpose(&self) -> Self {
        PlanarRotation { c: self.c, s: -self.s }
    }

    /// `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &PlanarRotation) -> Self {
        PlanarRotation {
            c: self.c * other.c - self.s * other.s,
            s: self.s * other.c + self.c * other.s,
        }
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        rotate_h(self, v)
    }

    pub fn matrix(&self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::new(self.c, -self.s, self.s, self.c)
    }
}

/// Yaw rotation embedded in 3D: the horizontal block is a [`PlanarRotation`],
/// the vertical axis is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rotation3Z {
    pub planar: PlanarRotation,
}

impl Rotation3Z {
    pub const IDENTITY: Rotation3Z = Rotation3Z { planar: PlanarRotation::IDENTITY };

    pub fn from_angle(theta: f64) -> Self {
        Rotation3Z { planar: PlanarRotation::from_angle(theta) }
    }

    pub fn from_planar(planar: PlanarRotation) -> Self {
        Rotation3Z { planar }
    }

    pub fn angle(&self) -> f64 {
        self.planar.angle()
    }

    pub fn transpose(&self) -> Self {
        Rotation3Z { planar: self.planar.transpose() }
    }

    pub fn compose(&self, other: &Rotation3Z) -> Self {
        Rotation3Z { planar: self.planar.compose(&other.planar) }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let h = rotate_h(&self.planar, &v.xy());
        Vector3::new(h.x, h.y, v.z)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let (c, s) = (self.planar.c, self.planar.s);
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
}

/// Scalar cross product `a.x * b.y - a.y * b.x`.
///
/// With this orientation `uᵀ R(θ) p = cos θ (u·p) + sin θ · cross2(p, u)`.
pub fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn rotate_h(r: &PlanarRotation, v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(r.c * v.x - r.s * v.y, r.s * v.x + r.c * v.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn norm_project_examples() {
        let r = PlanarRotation::norm_project(1.0, 0.0).unwrap();
        assert_eq!((r.cos(), r.sin()), (1.0, 0.0));
        let r = PlanarRotation::norm_project(2.0, 0.0).unwrap();
        assert_eq!((r.cos(), r.sin()), (1.0, 0.0));
        let r = PlanarRotation::norm_project(3.0 * 0.7f64.cos(), 3.0 * 0.7f64.sin()).unwrap();
        assert_abs_diff_eq!(r.cos(), 0.7f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.sin(), 0.7f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn norm_project_rejects_degenerate() {
        assert!(matches!(
            PlanarRotation::norm_project(0.0, 0.0),
            Err(GeometryError::DegenerateRotation { .. })
        ));
        assert!(PlanarRotation::norm_project(1e-10, -1e-10).is_err());
        assert!(PlanarRotation::norm_project(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn cross2_examples() {
        let e = |x, y| Vector2::new(x, y);
        assert_eq!(cross2(&e(1.0, 0.0), &e(0.0, 1.0)), 1.0);
        assert_eq!(cross2(&e(1.0, 2.0), &e(1.0, 2.0)), 0.0);
        assert_eq!(cross2(&e(2.0, 3.0), &e(5.0, 7.0)), -1.0);
    }

    #[test]
    fn rotate_h_examples() {
        let v = rotate_h(&PlanarRotation::IDENTITY, &Vector2::new(1.0, 2.0));
        assert_eq!(v, Vector2::new(1.0, 2.0));
        let v = rotate_h(&PlanarRotation::from_angle(PI / 2.0), &Vector2::new(1.0, 0.0));
        assert_abs_diff_eq!(v, Vector2::new(0.0, 1.0), epsilon = 1e-15);

        let th = 0.3f64;
        let m = nalgebra::Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        let p = Vector2::new(0.4, -0.2);
        let v = rotate_h(&PlanarRotation::from_angle(th), &p);
        assert_abs_diff_eq!(v, m * p, epsilon = 1e-15);
    }

    #[test]
    fn rotation3z_is_orthonormal() {
        let r = Rotation3Z::from_angle(1.234);
        let m = r.matrix();
        assert_abs_diff_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-14);
        let v = Vector3::new(0.3, -1.0, 2.0);
        assert_abs_diff_eq!(r.rotate(&v), m * v, epsilon = 1e-14);
    }

    #[test]
    fn wrapping() {
        assert_abs_diff_eq!(Angle(3.0 * PI).wrapped(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(Angle(-PI).wrapped(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(Angle(0.5 - 4.0 * PI).wrapped(), 0.5, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn norm_project_idempotent_and_angle_preserving(c in -10.0..10.0f64, s in -10.0..10.0f64) {
            prop_assume!(c.hypot(s) > 1e-6);
            let once = PlanarRotation::norm_project(c, s).unwrap();
            let twice = PlanarRotation::norm_project(once.cos(), once.sin()).unwrap();
            prop_assert!((once.cos() - twice.cos()).abs() < 1e-12);
            prop_assert!((once.sin() - twice.sin()).abs() < 1e-12);
            prop_assert!((once.cos().powi(2) + once.sin().powi(2) - 1.0).abs() < 1e-12);
            prop_assert!((once.angle() - s.atan2(c)).abs() < 1e-12);
        }

        #[test]
        fn bilinear_form_identity(
            ux in -5.0..5.0f64, uy in -5.0..5.0f64,
            px in -5.0..5.0f64, py in -5.0..5.0f64,
            th in -7.0..7.0f64,
        ) {
            let u = Vector2::new(ux, uy);
            let p = Vector2::new(px, py);
            let r = PlanarRotation::from_angle(th);
            let lhs = u.dot(&rotate_h(&r, &p));
            let rhs = th.cos() * u.dot(&p) + th.sin() * cross2(&p, &u);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn cross2_antisymmetric(a in proptest::array::uniform4(-9.0..9.0f64)) {
            let x = Vector2::new(a[0], a[1]);
            let y = Vector2::new(a[2], a[3]);
            prop_assert_eq!(cross2(&x, &y), -cross2(&y, &x));
        }

        #[test]
        fn rotation_preserves_norm(vx in -9.0..9.0f64, vy in -9.0..9.0f64, th in -7.0..7.0f64) {
            let v = Vector2::new(vx, vy);
            let w = rotate_h(&PlanarRotation::from_angle(th), &v);
            prop_assert!((w.norm() - v.norm()).abs() < 1e-12);
        }
    }
}
