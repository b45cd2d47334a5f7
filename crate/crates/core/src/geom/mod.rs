//! Geometry primitives shared by every stage: rotations, rigid and
//! similarity transforms, the 6D rotation parametrization, pinhole cameras,
//! point clouds, triangle meshes and pose sequences.

mod camera;
mod image;
mod mesh;
mod rotation;
mod sixd;
mod transform;

pub use camera::CameraIntrinsics;
pub use image::{Mask, OrganizedCloud, RgbImage};
pub use mesh::{ColoredPointCloud, TriangleMesh, DEGENERATE_AREA};
pub use rotation::{geodesic_angle, Rotation};
pub use sixd::{orth_jacobian, orth_matrix, SixDofParam};
pub use transform::{RigidTransform, SimilarityTransform};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Closest proper rotation matrix (Frobenius norm) via SVD.
pub fn project_to_so3(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Per-frame camera-from-world poses of one sequence, with validity flags.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PoseSequence {
    pub poses: Vec<RigidTransform>,
    pub valid: Vec<bool>,
    /// Per-frame fit residuals when the producer has them (meters).
    pub residuals: Option<Vec<f64>>,
    /// Set when the translations carry an unknown global scale.
    pub scale_free: bool,
}

impl PoseSequence {
    pub fn new(poses: Vec<RigidTransform>) -> Self {
        let n = poses.len();
        Self {
            poses,
            valid: vec![true; n],
            residuals: None,
            scale_free: false,
        }
    }

    pub fn with_validity(poses: Vec<RigidTransform>, valid: Vec<bool>) -> crate::Result<Self> {
        if poses.len() != valid.len() {
            return Err(crate::Error::LengthMismatch {
                expected: poses.len(),
                got: valid.len(),
            });
        }
        Ok(Self {
            poses,
            valid,
            residuals: None,
            scale_free: false,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}
