use std::ops::Mul;

use super::{Rotation, Vec3};
use crate::error::{Error, Result};

/// Element of SE(3): `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply_to_points(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    /// Position of the frame origin of `self`'s domain as seen from its codomain's inverse,
    /// i.e. the camera center when `self` is camera-from-world.
    pub fn center(&self) -> Vec3 {
        -self.rotation.inverse().rotate(&self.translation)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Element of Sim(3): `x ↦ s R x + t` with `s > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Rotation, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "similarity scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rigid(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }

    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = self.rotation.inverse();
        let s = 1.0 / self.scale;
        SimilarityTransform {
            scale: s,
            rotation: inv,
            translation: -inv.rotate(&self.translation) * s,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    pub fn apply_to_points(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

impl From<RigidTransform> for SimilarityTransform {
    fn from(t: RigidTransform) -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: t.rotation,
            translation: t.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::geodesic_angle;
    use proptest::prelude::*;

    fn rigid() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-3.0..3.0f64),
            prop::array::uniform3(-2.0..2.0f64),
        )
            .prop_map(|(w, t)| {
                RigidTransform::new(Rotation::exp(&Vec3::from(w)), Vec3::from(t))
            })
    }

    fn point() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-5.0..5.0f64).prop_map(Vec3::from)
    }

    #[test]
    fn similarity_definitional_example() {
        let s = SimilarityTransform::new(2.0, Rotation::identity(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.apply(&Vec3::new(1.0, 0.0, 0.0)), Vec3::new(2.0, 0.0, 1.0));
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(SimilarityTransform::new(0.0, Rotation::identity(), Vec3::zeros()).is_err());
        assert!(SimilarityTransform::new(-1.0, Rotation::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn identity_is_neutral() {
        let t = RigidTransform::new(
            Rotation::from_axis_angle(&Vec3::new(0.2, 1.0, 0.1), 0.7),
            Vec3::new(0.1, -0.3, 2.0),
        );
        assert_eq!(RigidTransform::identity() * t, t);
        let e = t * t.inverse();
        assert!(e.rotation.angle() < 1e-12);
        assert!(e.translation.norm() < 1e-12);
    }

    #[test]
    fn camera_center_maps_to_origin() {
        let t = RigidTransform::new(
            Rotation::from_axis_angle(&Vec3::new(0.0, 1.0, 0.3), -0.4),
            Vec3::new(0.3, 0.1, 0.5),
        );
        assert!(t.apply(&t.center()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(a in rigid(), b in rigid(), x in point()) {
            let lhs = a.compose(&b).apply(&x);
            let rhs = a.apply(&b.apply(&x));
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }

        #[test]
        fn inverse_undoes(a in rigid(), x in point()) {
            prop_assert!((a.inverse().apply(&a.apply(&x)) - x).norm() < 1e-9);
        }

        #[test]
        fn group_associativity(a in rigid(), b in rigid(), c in rigid()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!(geodesic_angle(&l.rotation, &r.rotation) < 1e-9);
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
        }

        #[test]
        fn similarity_laws(a in rigid(), b in rigid(), s1 in 0.1..5.0f64, s2 in 0.1..5.0f64, x in point()) {
            let sa = SimilarityTransform::new(s1, a.rotation, a.translation).unwrap();
            let sb = SimilarityTransform::new(s2, b.rotation, b.translation).unwrap();
            prop_assert!((sa.compose(&sb).apply(&x) - sa.apply(&sb.apply(&x))).norm() < 1e-9);
            prop_assert!((sa.inverse().apply(&sa.apply(&x)) - x).norm() < 1e-9);
        }
    }
}
