use horecon_core::geom::{geodesic_angle, CameraIntrinsics, PoseSequence, RigidTransform, Rotation, Vec2, Vec3};
use horecon_core::handcam::*;
use horecon_core::synth::{make_hand_rig, make_trajectory, observe_hand_sequence, relative_to_first, HandRig};
use horecon_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::centered(600.0, 640, 480).unwrap()
}

fn hand_in_world() -> RigidTransform {
    RigidTransform::new(
        Rotation::from_axis_angle(&Vec3::new(0.3, -0.5, 0.8), 0.9),
        Vec3::new(0.02, -0.03, 0.01),
    )
}

fn sequence(n: usize, sigma_px: f64, sigma_3d: f64, seed: u64) -> (HandRig, PoseSequence, Vec<HandKeypoints>) {
    let rig = make_hand_rig(seed);
    let cams = make_trajectory(n, 0.5, seed).unwrap();
    let obs = observe_hand_sequence(&rig, &hand_in_world(), &cams, &camera(), sigma_px, sigma_3d, seed);
    (rig, cams, obs)
}

fn rotation_errors(est: &PoseSequence, gt: &PoseSequence) -> Vec<f64> {
    est.poses
        .iter()
        .zip(&gt.poses)
        .map(|(a, b)| geodesic_angle(&a.rotation, &b.rotation).to_degrees())
        .collect()
}

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * p).round() as usize]
}

fn joints(points: [Vec3; NUM_JOINTS]) -> SceneJoints {
    SceneJoints {
        points,
        confident: [true; NUM_JOINTS],
        pose: RigidTransform::identity(),
    }
}

#[test]
fn noiseless_lifting_is_exact() {
    let (rig, cams, obs) = sequence(8, 0.0, 0.0, 1);
    for (k, cam) in obs.iter().zip(&cams.poses) {
        let lifted = lift_keypoints(k, &camera()).unwrap();
        let truth = cam.compose(&hand_in_world());
        for (p, j) in lifted.points.iter().zip(&rig.joints) {
            assert!((p - truth.apply(j)).norm() < 1e-4);
        }
    }
}

#[test]
fn pixel_noise_keeps_lifted_rotation_within_two_degrees() {
    let rig = make_hand_rig(0);
    let cam = make_trajectory(1, 0.5, 0).unwrap().poses[0].compose(&hand_in_world());
    let errs: Vec<f64> = (0..100)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rig.observe(&cam, &camera(), 1.0, 0.0, &mut rng);
            let lifted = lift_keypoints(&k, &camera()).unwrap();
            geodesic_angle(&lifted.pose.rotation, &cam.rotation).to_degrees()
        })
        .collect();
    assert!(percentile(errs, 0.95) < 2.0);
}

#[test]
fn too_few_confident_joints() {
    let (_, _, obs) = sequence(1, 0.0, 0.0, 2);
    let mut k = obs[0].clone();
    k.confidence = [0.1; NUM_JOINTS];
    for c in k.confidence.iter_mut().take(5) {
        *c = 0.9;
    }
    assert!(matches!(
        lift_keypoints(&k, &camera()),
        Err(Error::InsufficientPoints { needed: 6, got: 5 })
    ));
    k.confidence[5] = 0.31;
    assert!(lift_keypoints(&k, &camera()).is_ok());
    assert!(lift_keypoints(&HandKeypoints::missing(), &camera()).is_err());
}

#[test]
fn identical_frames_give_identity() {
    let rig = make_hand_rig(3);
    let frames = vec![Some(joints(rig.joints)); 5];
    let seq = relative_rigid(&frames).unwrap();
    for p in &seq.poses {
        assert!(geodesic_angle(&p.rotation, &Rotation::identity()) < 1e-9);
        assert!(p.translation.norm() < 1e-12);
    }
}

#[test]
fn rigid_rotation_recovered_exactly() {
    let rig = make_hand_rig(4);
    let axis = Vec3::new(0.1, 1.0, 0.2).normalize();
    let offset = Vec3::new(0.0, 0.0, 0.4);
    let frames: Vec<Option<SceneJoints>> = (0..8)
        .map(|i| {
            let r = Rotation::from_axis_angle(&axis, (10.0 * i as f64).to_radians());
            Some(joints(rig.joints.map(|p| r.rotate(&p) + offset)))
        })
        .collect();
    let seq = relative_rigid(&frames).unwrap();
    for (i, p) in seq.poses.iter().enumerate() {
        let angle = p.rotation.angle().to_degrees();
        assert!((angle - 10.0 * i as f64).abs() < 1e-6, "{i}: {angle}");
    }
}

#[test]
fn relative_poses_compose() {
    let (_, _, obs) = sequence(10, 0.0, 0.0, 5);
    let lifted: Vec<Option<SceneJoints>> = obs.iter().map(|k| lift_keypoints(k, &camera()).ok()).collect();
    let seq = relative_rigid(&lifted).unwrap();
    assert_eq!(seq.poses[0], RigidTransform::identity());
    let (i, j) = (3, 8);
    let composed = seq.poses[j].compose(&seq.poses[i].inverse());
    let direct = relative_rigid(&[lifted[i].clone(), lifted[j].clone()]).unwrap().poses[1];
    assert!(geodesic_angle(&composed.rotation, &direct.rotation) < 1e-6);
    assert!((composed.translation - direct.translation).norm() < 1e-6);
}

#[test]
fn invalid_frames_carry_previous_pose() {
    let (_, _, obs) = sequence(6, 0.0, 0.0, 6);
    let mut lifted: Vec<Option<SceneJoints>> = obs.iter().map(|k| lift_keypoints(k, &camera()).ok()).collect();
    lifted[3] = None;
    let seq = relative_rigid(&lifted).unwrap();
    assert_eq!(seq.valid, vec![true, true, true, false, true, true]);
    assert_eq!(seq.poses[3], seq.poses[2]);
    assert!(matches!(relative_rigid(&[None, None]), Err(Error::NoValidFrames)));
}

#[test]
fn pipeline_rotation_error_percentile() {
    let (_, cams, obs) = sequence(64, 1.0, 0.0, 7);
    let est = hand_poses(&obs, &camera(), SmoothingMode::None).unwrap();
    assert!(est.valid.iter().all(|&v| v));
    let errs = rotation_errors(&est, &relative_to_first(&cams));
    assert!(percentile(errs, 0.95) < 2.0);
}

#[test]
fn constant_sequences_are_unchanged() {
    let (_, _, obs) = sequence(1, 0.0, 0.0, 8);
    let seq = vec![obs[0].clone(); 7];
    for mode in [SmoothingMode::FixedHandPose, SmoothingMode::SlidingMedian { window: 5 }] {
        let once = smooth_keypoints(&seq, mode).unwrap();
        assert_eq!(once, seq);
        assert_eq!(smooth_keypoints(&once, mode).unwrap(), once);
    }
    let pose = hand_in_world();
    let poses = PoseSequence::new(vec![pose; 7]);
    let smoothed = smooth_poses(&poses, 5).unwrap();
    assert_eq!(smoothed, poses);
    assert_eq!(smooth_poses(&smoothed, 5).unwrap(), smoothed);
}

#[test]
fn single_outlier_removed() {
    let (_, _, obs) = sequence(1, 0.0, 0.0, 9);
    let mut seq = vec![obs[0].clone(); 5];
    seq[2].joints3d_wrist[7] += Vec3::new(0.05, 0.0, 0.0);
    let out = smooth_keypoints(&seq, SmoothingMode::SlidingMedian { window: 5 }).unwrap();
    assert_eq!(out[2], obs[0]);

    let pose = hand_in_world();
    let mut poses = PoseSequence::new(vec![pose; 5]);
    poses.poses[2] = RigidTransform::new(
        pose.rotation.compose(&Rotation::from_axis_angle(&Vec3::z(), 0.5)),
        pose.translation + Vec3::new(0.1, 0.0, 0.0),
    );
    let out = smooth_poses(&poses, 5).unwrap();
    assert_eq!(out.poses[2], pose);
}

#[test]
fn sliding_median_window_validation() {
    let (_, _, obs) = sequence(3, 0.0, 0.0, 10);
    assert!(smooth_keypoints(&obs, SmoothingMode::SlidingMedian { window: 4 }).is_err());
    assert!(smooth_poses(&PoseSequence::new(vec![RigidTransform::identity(); 3]), 2).is_err());
}

#[test]
fn joint_jitter_error_envelope() {
    let errs: Vec<f64> = (0..20)
        .flat_map(|seed| {
            let (_, cams, obs) = sequence(16, 0.0, 0.002, 100 + seed);
            let est = hand_poses(&obs, &camera(), SmoothingMode::None).unwrap();
            rotation_errors(&est, &relative_to_first(&cams))
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 2.0, "{mean}");
    assert!(percentile(errs, 0.95) < 5.0);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn fixed_hand_pose_usually_helps() {
    let wins = (0..100)
        .filter(|&seed| {
            let (_, cams, obs) = sequence(64, 1.0, 0.005, 1000 + seed);
            let gt = relative_to_first(&cams);
            let raw = hand_poses(&obs, &camera(), SmoothingMode::None).unwrap();
            let fixed = hand_poses(&obs, &camera(), SmoothingMode::FixedHandPose).unwrap();
            mean(&rotation_errors(&fixed, &gt)) <= mean(&rotation_errors(&raw, &gt))
        })
        .count();
    assert!(wins >= 80, "{wins}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_frame_is_identity(seed in 0u64..10_000, n in 1usize..6) {
        let rig = make_hand_rig(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Option<SceneJoints>> = (0..n)
            .map(|_| {
                let axis = Vec3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
                let r = Rotation::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
                let t = Vec3::new(rng.random(), rng.random(), rng.random());
                let jitter = Vec2::new(rng.random(), rng.random()) * 1e-3;
                Some(joints(rig.joints.map(|p| r.rotate(&p) + t + Vec3::new(jitter.x, jitter.y, 0.0))))
            })
            .collect();
        let seq = relative_rigid(&frames).unwrap();
        prop_assert!(geodesic_angle(&seq.poses[0].rotation, &Rotation::identity()) < 1e-7);
        prop_assert!(seq.poses[0].translation.norm() < 1e-9);
    }
}
