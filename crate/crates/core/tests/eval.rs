use horecon_core::eval::{
    eval_poses, eval_recon, eval_recon_detailed, grouped_report, point_set_metrics, sample_surface, MetricRecord,
    PoseEvalConfig, PoseReport, ReconConfig, ReconReport, RelativeMode,
};
use horecon_core::geom::{PoseSequence, RigidTransform, Rotation, TriangleMesh, Vec3};
use horecon_core::spatial::sample_surface_points;
use horecon_core::synth::{make_mesh, make_trajectory, MeshKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_square() -> TriangleMesh {
    TriangleMesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
        vec![[0, 1, 2], [0, 2, 3]],
        None,
        None,
        false,
    )
    .unwrap()
}

#[test]
fn sampling_is_area_uniform() {
    let pts = sample_surface_points(&unit_square(), 100_000, 1).unwrap();
    let first = pts.iter().filter(|p| p.face == 0).count() as f64 / 1e5;
    assert!((first - 0.5).abs() < 0.02 * 0.5);
    let tri = TriangleMesh::new(
        vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
        vec![[0, 1, 2]],
        None,
        None,
        false,
    )
    .unwrap();
    for p in sample_surface(&tri, 1000, 2).unwrap() {
        assert!((p.x + p.y + p.z - 1.0).abs() < 1e-12);
    }
    assert!(sample_surface(&tri, 0, 3).unwrap().is_empty());
    assert!(sample_surface(&TriangleMesh::default(), 10, 3).is_err());
}

fn small_cfg(n: usize) -> ReconConfig {
    ReconConfig {
        n_samples: n,
        thresholds: vec![0.002, 0.005, 0.01],
        ..ReconConfig::default()
    }
}

#[test]
fn identical_meshes_score_perfectly() {
    for kind in [MeshKind::Sphere, MeshKind::Torus, MeshKind::Box] {
        let m = make_mesh(kind, 0.1, 0).unwrap();
        let r = eval_recon(&m, &m, &small_cfg(3000)).unwrap();
        let met = r.metrics.unwrap();
        assert!(met.acc_cm < 1e-9 && met.comp_cm < 1e-9);
        assert!(met.fscore_at.iter().all(|&f| f == 100.0));
        assert_eq!(r.rec_rate, 100.0);
    }
}

#[test]
fn translation_is_removed_by_alignment() {
    let gt = make_mesh(MeshKind::BumpySphere, 0.1, 0).unwrap();
    let pred = gt.transformed(&RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)));
    let r = eval_recon(&pred, &gt, &small_cfg(5000)).unwrap();
    assert_eq!(r.metrics.unwrap().fscore_at[1], 100.0);
}

/// O(n²) nearest-neighbour metrics.
fn brute_force(pred: &[Vec3], gt: &[Vec3], thresholds: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nn = |q: &Vec3, set: &[Vec3]| {
        set.iter()
            .map(|p| {
                let d = q - p;
                d.x * d.x + d.y * d.y + d.z * d.z
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let acc: Vec<f64> = pred.iter().map(|q| nn(q, gt)).collect();
    let comp: Vec<f64> = gt.iter().map(|q| nn(q, pred)).collect();
    let pct = |d: &[f64], t: f64| 100.0 * d.iter().filter(|&&x| x <= t).count() as f64 / d.len() as f64;
    let a: Vec<f64> = thresholds.iter().map(|&t| pct(&acc, t)).collect();
    let c: Vec<f64> = thresholds.iter().map(|&t| pct(&comp, t)).collect();
    let f = a
        .iter()
        .zip(&c)
        .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .collect();
    (a, c, f)
}

#[test]
fn half_deleted_mesh_matches_brute_force() {
    let gt = make_mesh(MeshKind::Sphere, 0.1, 0).unwrap();
    let faces = (0..gt.faces.len())
        .filter(|&f| gt.corners(f).iter().map(|p| p.z).sum::<f64>() > 0.0)
        .map(|f| gt.faces[f])
        .collect();
    let half = TriangleMesh { faces, ..gt.clone() };
    let cfg = small_cfg(500);
    let (report, align) = eval_recon_detailed(&half, &gt, &cfg).unwrap();
    let m = report.metrics.unwrap();
    let pred = align.apply_to_points(&sample_surface(&half, 500, cfg.seed).unwrap());
    let gt_pts = sample_surface(&gt, 500, cfg.seed).unwrap();
    let (a, c, f) = brute_force(&pred, &gt_pts, &cfg.thresholds);
    assert_eq!(m.acc_ratio_at, a);
    assert_eq!(m.comp_ratio_at, c);
    assert_eq!(m.fscore_at, f);

    // dense sampling: all predicted points match, about half the ground truth does
    let dense = eval_recon(&half, &gt, &small_cfg(20_000)).unwrap().metrics.unwrap();
    assert!(dense.acc_ratio_at[1] > 99.0);
    assert!((dense.comp_ratio_at[1] - 50.0).abs() < 4.0);
    assert!((dense.fscore_at[1] - 66.7).abs() < 3.0);
}

#[test]
fn swapping_swaps_acc_and_comp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Vec3> = (0..400).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1).collect();
    let b: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1).collect();
    let t = [0.005, 0.01, 0.02];
    let ab = point_set_metrics(&a, &b, &t).unwrap();
    let ba = point_set_metrics(&b, &a, &t).unwrap();
    assert_eq!(ab.acc_cm, ba.comp_cm);
    assert_eq!(ab.acc_ratio_at, ba.comp_ratio_at);
    assert_eq!(ab.fscore_at, ba.fscore_at);
    assert!(ab.fscore_at.windows(2).all(|w| w[0] <= w[1]));
    let (ra, rc, rf) = brute_force(&a, &b, &t);
    assert_eq!((ab.acc_ratio_at, ab.comp_ratio_at, ab.fscore_at), (ra, rc, rf));
}

#[test]
fn recon_report_round_trips_json() {
    let m = make_mesh(MeshKind::Box, 0.1, 0).unwrap();
    let r = eval_recon(&m, &m, &small_cfg(500)).unwrap();
    let s = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<ReconReport>(&s).unwrap(), r);
    let failed = ReconReport::failed(&[0.005]);
    assert_eq!(failed.records().len(), 1);
}

fn gt_sequence(n: usize) -> PoseSequence {
    make_trajectory(n, 0.5, 3).unwrap()
}

#[test]
fn identical_poses_are_perfect() {
    let gt = gt_sequence(30);
    let r = eval_poses(&gt, &gt, &PoseEvalConfig::default()).unwrap();
    assert_eq!(r.quality_at, vec![100.0; 3]);
    assert_eq!(r.det_rate, 100.0);
    assert!(r.mean_rot_error_deg < 1e-6 && r.trans_rmse_m < 1e-9);
    assert_eq!(r.evaluated_frames, 29);
}

#[test]
fn threshold_boundaries_are_inclusive() {
    let n = 10;
    let gt = PoseSequence::new(vec![RigidTransform::identity(); n]);
    let off = RigidTransform::new(
        Rotation::from_axis_angle(&Vec3::new(0.3, -1.0, 0.2), 10f64.to_radians()),
        Vec3::new(0.0, 0.03, 0.0),
    );
    let mut poses = vec![off; n];
    poses[0] = RigidTransform::identity();
    let pred = PoseSequence::new(poses);
    let r = eval_poses(&pred, &gt, &PoseEvalConfig::default()).unwrap();
    assert_eq!(r.quality_at, vec![0.0, 100.0, 100.0]);
    assert!((r.trans_mse_m2 - 9e-4).abs() < 1e-15);
}

#[test]
fn quality_matches_recount_with_failures() {
    let n = 200;
    let gt = gt_sequence(n);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pred = gt.clone();
    for i in 1..n {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let d = RigidTransform::new(
            Rotation::from_axis_angle(&axis, rng.random_range(0.0..25f64).to_radians()),
            Vec3::new(rng.random_range(-0.07..0.07), rng.random_range(-0.07..0.07), 0.0),
        );
        pred.poses[i] = d.compose(&gt.poses[i]);
        pred.valid[i] = rng.random_bool(0.9);
    }
    for mode in [RelativeMode::FrameZero, RelativeMode::Consecutive] {
        let cfg = PoseEvalConfig {
            relative: mode,
            ..PoseEvalConfig::default()
        };
        let r = eval_poses(&pred, &gt, &cfg).unwrap();
        let mut total = 0;
        let mut hits = vec![0; cfg.pairs.len()];
        for i in 0..n {
            let reference = match mode {
                RelativeMode::FrameZero => 0,
                RelativeMode::Consecutive => {
                    if i == 0 || !pred.valid[i - 1] {
                        continue;
                    }
                    i - 1
                }
            };
            if i == reference || !pred.valid[i] {
                continue;
            }
            let p = pred.poses[i].compose(&pred.poses[reference].inverse());
            let g = gt.poses[i].compose(&gt.poses[reference].inverse());
            let re = horecon_core::geom::geodesic_angle(&p.rotation, &g.rotation).to_degrees();
            let te = (p.translation - g.translation).norm();
            total += 1;
            for (k, &(tt, tr)) in cfg.pairs.iter().enumerate() {
                if te <= tt && re <= tr {
                    hits[k] += 1;
                }
            }
        }
        let want: Vec<f64> = hits.iter().map(|&h| 100.0 * h as f64 / total as f64).collect();
        assert_eq!(r.quality_at, want);
        assert!(r.quality_at.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.det_rate, 100.0 * pred.valid_count() as f64 / n as f64);
    }
}

#[test]
fn scale_free_predictions_are_rescaled() {
    let gt = gt_sequence(20);
    let mut pred = gt.clone();
    for p in &mut pred.poses {
        p.translation *= 0.25;
    }
    let r = eval_poses(&pred, &gt, &PoseEvalConfig::default()).unwrap();
    assert!(r.quality_at[0] < 100.0);
    pred.scale_free = true;
    let r = eval_poses(&pred, &gt, &PoseEvalConfig::default()).unwrap();
    assert!((r.gauge_scale - 4.0).abs() < 1e-9);
    assert_eq!(r.quality_at, vec![100.0; 3]);
}

#[test]
fn pose_report_round_trips_and_checks_lengths() {
    let gt = gt_sequence(5);
    let mut pred = gt.clone();
    pred.valid[2] = false;
    let r = eval_poses(&pred, &gt, &PoseEvalConfig::default()).unwrap();
    let s = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<PoseReport>(&s).unwrap(), r);
    let short = gt_sequence(4);
    assert!(eval_poses(&short, &gt, &PoseEvalConfig::default()).is_err());
}

#[test]
fn grouped_report_means_and_stds() {
    let rec = |v: f64| vec![MetricRecord { metric: "fscore".into(), threshold: "5mm".into(), value: v }];
    let items = vec![
        ("small".to_string(), rec(10.0)),
        ("small".to_string(), rec(20.0)),
        ("large".to_string(), rec(7.0)),
    ];
    let g = grouped_report(&items, &[]).unwrap();
    let key = ("fscore".to_string(), "5mm".to_string());
    assert_eq!((g["small"][&key].mean, g["small"][&key].std), (15.0, 5.0));
    assert_eq!((g["large"][&key].mean, g["large"][&key].std), (7.0, 0.0));
}
