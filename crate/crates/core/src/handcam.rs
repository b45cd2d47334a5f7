//! Rigid transforms from per-frame hand keypoints: PnP lifting of the
//! wrist-centered joints into the scene, Procrustes between frames, and the
//! median-based smoothing variants.

use crate::align::{pnp, umeyama};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, PoseSequence, RigidTransform, Rotation, Vec2, Vec3};

pub const NUM_JOINTS: usize = 21;
/// Joints with confidence above this take part in PnP and Procrustes.
pub const CONFIDENCE_GATE: f64 = 0.3;
pub const MIN_CONFIDENT_JOINTS: usize = 6;

/// Detector output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HandKeypoints {
    pub joints2d: [Vec2; NUM_JOINTS],
    /// Wrist-centered 3D joints, meters; entry 0 is the wrist.
    pub joints3d_wrist: [Vec3; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
    pub valid: bool,
}

impl HandKeypoints {
    pub fn new(
        joints2d: [Vec2; NUM_JOINTS],
        joints3d_wrist: [Vec3; NUM_JOINTS],
        confidence: [f64; NUM_JOINTS],
        valid: bool,
    ) -> Result<Self> {
        if joints3d_wrist[0].norm() > 1e-9 {
            return Err(Error::InvalidInput("wrist joint is not at the origin".into()));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("confidence outside [0, 1]".into()));
        }
        Ok(Self {
            joints2d,
            joints3d_wrist,
            confidence,
            valid,
        })
    }

    /// An invalid frame (detector returned nothing).
    pub fn missing() -> Self {
        Self {
            joints2d: [Vec2::zeros(); NUM_JOINTS],
            joints3d_wrist: [Vec3::zeros(); NUM_JOINTS],
            confidence: [0.0; NUM_JOINTS],
            valid: false,
        }
    }

    pub fn confident(&self) -> [bool; NUM_JOINTS] {
        self.confidence.map(|c| c > CONFIDENCE_GATE)
    }
}

/// Joints expressed in the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneJoints {
    pub points: [Vec3; NUM_JOINTS],
    pub confident: [bool; NUM_JOINTS],
    /// Camera-from-hand pose found by PnP.
    pub pose: RigidTransform,
}

/// Places the wrist-centered joints in the scene with the PnP pose of the confident joints.
pub fn lift_keypoints(k: &HandKeypoints, intrinsics: &CameraIntrinsics) -> Result<SceneJoints> {
    if !k.valid {
        return Err(Error::InvalidInput("keypoints flagged invalid".into()));
    }
    let confident = k.confident();
    let (p3, p2): (Vec<Vec3>, Vec<Vec2>) = (0..NUM_JOINTS)
        .filter(|&j| confident[j])
        .map(|j| (k.joints3d_wrist[j], k.joints2d[j]))
        .unzip();
    if p3.len() < MIN_CONFIDENT_JOINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_CONFIDENT_JOINTS,
            got: p3.len(),
        });
    }
    let pose = pnp(&p3, &p2, intrinsics)?.pose;
    Ok(SceneJoints {
        points: k.joints3d_wrist.map(|p| pose.apply(&p)),
        confident,
        pose,
    })
}

fn procrustes(from: &SceneJoints, to: &SceneJoints) -> Result<RigidTransform> {
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = (0..NUM_JOINTS)
        .filter(|&j| from.confident[j] && to.confident[j])
        .map(|j| (from.points[j], to.points[j]))
        .unzip();
    if src.len() < MIN_CONFIDENT_JOINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_CONFIDENT_JOINTS,
            got: src.len(),
        });
    }
    Ok(umeyama(&src, &dst, false)?.rigid())
}

/// Camera-from-world poses with the world fixed to the reference frame's
/// camera. The reference is frame 0, or the first valid frame when frame 0
/// is missing. Frames that fail carry the previous pose and are flagged.
pub fn relative_rigid(frames: &[Option<SceneJoints>]) -> Result<PoseSequence> {
    let ref_index = frames.iter().position(Option::is_some).ok_or(Error::NoValidFrames)?;
    let reference = frames[ref_index].as_ref().expect("position of a Some");
    let mut poses = Vec::with_capacity(frames.len());
    let mut valid = Vec::with_capacity(frames.len());
    let mut last = RigidTransform::identity();
    for (i, frame) in frames.iter().enumerate() {
        let fit = if i == ref_index {
            Some(Ok(RigidTransform::identity()))
        } else {
            frame.as_ref().map(|f| procrustes(reference, f))
        };
        match fit {
            Some(Ok(t)) => {
                last = t;
                valid.push(true);
            }
            _ => valid.push(false),
        }
        poses.push(last);
    }
    PoseSequence::with_validity(poses, valid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoothingMode {
    None,
    /// Replace every frame's hand shape by the per-coordinate median over valid frames.
    FixedHandPose,
    /// Centered sliding median over pose sequences.
    SlidingMedian { window: usize },
}

impl SmoothingMode {
    pub fn validate(&self) -> Result<()> {
        if let SmoothingMode::SlidingMedian { window } = self {
            if *window < 3 || window % 2 == 0 {
                return Err(Error::InvalidInput(format!(
                    "median window must be odd and >= 3, got {window}"
                )));
            }
        }
        Ok(())
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn coordinate_median(points: &[Vec3]) -> Vec3 {
    let mut out = Vec3::zeros();
    let mut buf = Vec::with_capacity(points.len());
    for c in 0..3 {
        buf.clear();
        buf.extend(points.iter().map(|p| p[c]));
        out[c] = median(&mut buf);
    }
    out
}

/// Keypoint-level smoothing applied before lifting. `FixedHandPose` replaces
/// the 3D hand shape of every frame; `SlidingMedian` takes a per-joint,
/// per-coordinate median of the shape over the clamped window of valid frames.
pub fn smooth_keypoints(seq: &[HandKeypoints], mode: SmoothingMode) -> Result<Vec<HandKeypoints>> {
    mode.validate()?;
    let valid: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].valid).collect();
    let mut out = seq.to_vec();
    match mode {
        SmoothingMode::None => {}
        SmoothingMode::FixedHandPose => {
            if valid.is_empty() {
                return Ok(out);
            }
            let shape: [Vec3; NUM_JOINTS] = std::array::from_fn(|j| {
                let pts: Vec<Vec3> = valid.iter().map(|&i| seq[i].joints3d_wrist[j]).collect();
                coordinate_median(&pts)
            });
            for k in out.iter_mut().filter(|k| k.valid) {
                k.joints3d_wrist = shape;
            }
        }
        SmoothingMode::SlidingMedian { window } => {
            for i in 0..seq.len() {
                if !seq[i].valid {
                    continue;
                }
                let idx: Vec<usize> = window_indices(i, seq.len(), window)
                    .filter(|&w| seq[w].valid)
                    .collect();
                out[i].joints3d_wrist = std::array::from_fn(|j| {
                    let pts: Vec<Vec3> = idx.iter().map(|&w| seq[w].joints3d_wrist[j]).collect();
                    coordinate_median(&pts)
                });
            }
        }
    }
    Ok(out)
}

fn window_indices(i: usize, n: usize, window: usize) -> impl Iterator<Item = usize> {
    let half = (window / 2) as isize;
    (-half..=half).map(move |o| (i as isize + o).clamp(0, n as isize - 1) as usize)
}

/// Geodesic (L1) median of rotations by Weiszfeld iterations on SO(3),
/// with signs aligned to the first element. Returns a data point when it
/// satisfies the optimality condition.
pub fn rotation_median(rotations: &[Rotation]) -> Rotation {
    const TIE: f64 = 1e-12;
    match rotations.len() {
        0 => return Rotation::identity(),
        1 => return rotations[0],
        _ => {}
    }
    for (j, y) in rotations.iter().enumerate() {
        let mut pull = Vec3::zeros();
        let mut multiplicity = 0usize;
        for z in rotations {
            let v = y.inverse().compose(z).log();
            let d = v.norm();
            if d <= TIE {
                multiplicity += 1;
            } else {
                pull += v / d;
            }
        }
        if pull.norm() <= multiplicity as f64 {
            return rotations[j];
        }
    }

    let q0 = rotations[0].unit_quaternion().into_inner();
    let mut acc = nalgebra::Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for r in rotations {
        let q = r.unit_quaternion().into_inner();
        acc += if q.dot(&q0) < 0.0 { -q } else { q };
    }
    let mut m = Rotation::from_unit_quaternion(nalgebra::UnitQuaternion::new_normalize(acc));
    for _ in 0..20 {
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for r in rotations {
            let v = m.inverse().compose(r).log();
            let d = v.norm().max(TIE);
            num += v / d;
            den += 1.0 / d;
        }
        let step = num / den;
        m = m.compose(&Rotation::exp(&step));
        if step.norm() < 1e-8 {
            break;
        }
    }
    m
}

/// Centered sliding median over a pose sequence: per-coordinate median of
/// translations and geodesic median of rotations, over valid frames of the
/// clamped window. Invalid frames are left untouched.
pub fn smooth_poses(seq: &PoseSequence, window: usize) -> Result<PoseSequence> {
    SmoothingMode::SlidingMedian { window }.validate()?;
    let n = seq.len();
    let mut out = seq.clone();
    for i in 0..n {
        if !seq.valid[i] {
            continue;
        }
        let idx: Vec<usize> = window_indices(i, n, window)
            .filter(|&w| seq.valid[w])
            .collect();
        let ts: Vec<Vec3> = idx.iter().map(|&w| seq.poses[w].translation).collect();
        let rs: Vec<Rotation> = idx.iter().map(|&w| seq.poses[w].rotation).collect();
        out.poses[i] = RigidTransform::new(rotation_median(&rs), coordinate_median(&ts));
    }
    Ok(out)
}

/// Full hand-camera pipeline: optional keypoint smoothing, lifting, Procrustes,
/// optional pose smoothing. Frames that cannot be lifted become invalid.
pub fn hand_poses(
    seq: &[HandKeypoints],
    intrinsics: &CameraIntrinsics,
    mode: SmoothingMode,
) -> Result<PoseSequence> {
    let keypoints = match mode {
        SmoothingMode::FixedHandPose => smooth_keypoints(seq, mode)?,
        _ => seq.to_vec(),
    };
    let lifted: Vec<Option<SceneJoints>> = keypoints
        .iter()
        .map(|k| lift_keypoints(k, intrinsics).ok())
        .collect();
    let poses = relative_rigid(&lifted)?;
    match mode {
        SmoothingMode::SlidingMedian { window } => smooth_poses(&poses, window),
        _ => Ok(poses),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::geodesic_angle;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rotation_median_rejects_single_outlier() {
        let c = Rotation::from_axis_angle(&Vec3::new(0.2, 1.0, -0.3), 0.7);
        let out = Rotation::from_axis_angle(&Vec3::x(), 2.0);
        let m = rotation_median(&[c, c, out, c, c]);
        assert_eq!(m, c);
    }

    #[test]
    fn rotation_median_of_spread_set_is_central() {
        let rs: Vec<Rotation> = [-0.2, -0.1, 0.05, 0.1, 0.3]
            .iter()
            .map(|&a| Rotation::from_axis_angle(&Vec3::z(), a))
            .collect();
        let m = rotation_median(&rs);
        // one-dimensional case: the median angle is the middle one
        assert!(geodesic_angle(&m, &rs[2]) < 1e-9);
    }

    #[test]
    fn window_validation() {
        assert!(SmoothingMode::SlidingMedian { window: 4 }.validate().is_err());
        assert!(SmoothingMode::SlidingMedian { window: 1 }.validate().is_err());
        assert!(SmoothingMode::SlidingMedian { window: 5 }.validate().is_ok());
    }

    #[test]
    fn keypoints_reject_offset_wrist() {
        let mut j3 = [Vec3::zeros(); NUM_JOINTS];
        j3[0] = Vec3::new(0.0, 0.0, 1e-6);
        assert!(HandKeypoints::new([Vec2::zeros(); NUM_JOINTS], j3, [1.0; NUM_JOINTS], true).is_err());
    }
}
