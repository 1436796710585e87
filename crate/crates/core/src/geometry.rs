//! Shared geometric primitives.
//!
//! Quaternions are scalar-first `(w, x, y, z)` with the Hamilton product and
//! describe body-to-world orientation: `v_world = q ⊗ v_body ⊗ q*`.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest step accepted by [`Quaternion::integrate`].
pub const MAX_INTEGRATION_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Scales to unit norm, preserving direction.
    pub fn normalize(&self) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::NonFinite("quaternion"));
        }
        let n = self.norm();
        if n <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("zero rotation axis".into()));
        }
        Ok(Self::from_rotation_vector(&(axis * (angle / n))))
    }

    /// Exponential map of a rotation vector (axis × angle).
    pub fn from_rotation_vector(rv: &Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            let half = rv * 0.5;
            let q = Self::new(1.0, half.x, half.y, half.z);
            let n = q.norm();
            return Self::new(q.w / n, q.x / n, q.y / n, q.z / n);
        }
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        Self::new(half.cos(), rv.x * s, rv.y * s, rv.z * s)
    }

    /// Logarithm map: the rotation vector of the shortest rotation equal to `self`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let (w, v) = if self.w < 0.0 {
            (-self.w, -self.vector())
        } else {
            (self.w, self.vector())
        };
        let vn = v.norm();
        if vn < 1e-12 {
            return v * (2.0 / w);
        }
        v * (2.0 * vn.atan2(w) / vn)
    }

    pub fn from_yaw(yaw: f64) -> Self {
        let h = 0.5 * yaw;
        Self::new(h.cos(), 0.0, 0.0, h.sin())
    }

    /// Heading angle about world z (ZYX convention).
    pub fn yaw(&self) -> f64 {
        (2.0 * (self.w * self.z + self.x * self.y))
            .atan2(1.0 - 2.0 * (self.y * self.y + self.z * self.z))
    }

    /// Rotates `v` by `q ⊗ v ⊗ q*`. Assumes a unit quaternion.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotates `v` by the inverse rotation.
    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Orientation equality: `q` and `-q` describe the same rotation.
    pub fn orientation_eq(&self, other: &Self, tol: f64) -> bool {
        let d = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        (1.0 - d.abs()) <= tol
    }

    /// Angle of the relative rotation between two orientations.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.conjugate() * *other).to_rotation_vector().norm()
    }

    /// Propagates a body-to-world orientation under constant body rate
    /// `omega` for `dt` seconds: `q ⊗ exp(omega·dt)`.
    pub fn integrate(&self, omega_body: &Vec3, dt: f64) -> Result<Self> {
        if !self.is_finite() || !omega_body.iter().all(|c| c.is_finite()) || !dt.is_finite() {
            return Err(Error::NonFinite("quaternion integration input"));
        }
        if dt <= 0.0 || dt > MAX_INTEGRATION_STEP {
            return Err(Error::InvalidArgument(format!(
                "integration step {dt} s outside (0, {MAX_INTEGRATION_STEP}]"
            )));
        }
        (*self * Self::from_rotation_vector(&(omega_body * dt))).normalize()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

/// Position, body-to-world orientation and timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
    pub timestamp_ns: u64,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quaternion, timestamp_ns: u64) -> Self {
        Self {
            position,
            orientation,
            timestamp_ns,
        }
    }

    pub fn identity(timestamp_ns: u64) -> Self {
        Self::new(Vec3::zeros(), Quaternion::identity(), timestamp_ns)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.rotate(p) + self.position
    }
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn secs_to_ns(t: f64) -> u64 {
    (t * 1e9).round() as u64
}

pub fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 * 1e-9
}
