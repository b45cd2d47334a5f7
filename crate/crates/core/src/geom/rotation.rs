use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

use super::{Mat3, Vec3};
use crate::error::{Error, Result};

/// A 3D rotation stored as a unit quaternion with `w >= 0`.
///
/// When `w == 0` the sign is fixed so that the largest-magnitude vector
/// component is positive, which makes the angle-π logarithm deterministic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if !n2.is_finite() || n2 < 1e-300 {
            return Err(Error::InvalidInput(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Self::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    fn from_quaternion(q: Quaternion<f64>) -> Self {
        let n2 = q.norm_squared();
        // Already-unit input is kept bit-for-bit so that file round trips are exact.
        let q = if (n2 - 1.0).abs() > 1e-15 {
            q / n2.sqrt()
        } else {
            q
        };
        Self {
            q: UnitQuaternion::new_unchecked(canonical(q)),
        }
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::from_quaternion(q.into_inner())
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-300 || angle == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Nearest rotation to a (near-)orthonormal matrix.
    pub fn from_matrix(m: &Mat3) -> Self {
        let r = Rotation3::from_matrix_unchecked(super::project_to_so3(m));
        Self::from_unit_quaternion(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn matrix(&self) -> Mat3 {
        self.q.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::from_quaternion((self.q * other.q).into_inner())
    }

    pub fn inverse(&self) -> Rotation {
        Self::from_quaternion(self.q.inverse().into_inner())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.q.transform_vector(v)
    }

    /// Axis-angle vector (angle in radians, in `[0, π]`).
    pub fn log(&self) -> Vec3 {
        let q = self.q.quaternion();
        let v = q.vector().into_owned();
        let s = v.norm();
        if s < 1e-12 {
            // first order; w is ~1 here
            return v * (2.0 / q.w);
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn exp(v: &Vec3) -> Rotation {
        let theta = v.norm();
        let q = if theta < 1e-12 {
            Quaternion::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z)
        } else {
            let (s, c) = (0.5 * theta).sin_cos();
            let a = v * (s / theta);
            Quaternion::new(c, a.x, a.y, a.z)
        };
        Self::from_quaternion(q)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.q.quaternion();
        2.0 * q.vector().norm().atan2(q.w.abs())
    }
}

fn canonical(q: Quaternion<f64>) -> Quaternion<f64> {
    let flip = if q.w != 0.0 {
        q.w < 0.0
    } else {
        let v = [q.i, q.j, q.k];
        let mut best = 0;
        for k in 1..3 {
            if v[k].abs() > v[best].abs() {
                best = k;
            }
        }
        v[best] < 0.0
    };
    if flip {
        -q
    } else {
        q
    }
}

/// Geodesic distance on SO(3) between two rotations, in radians.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let d = a.q.inverse() * b.q;
    let q = d.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}
