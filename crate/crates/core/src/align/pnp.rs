//! Perspective-n-point: normalized DLT initialization followed by damped
//! Gauss-Newton on the reprojection error.
//!
//! The rotation update is parametrized with the 6D Gram-Schmidt
//! representation around the current estimate; its three gauge directions
//! are absorbed by the damping term.

use nalgebra::{DMatrix, Matrix3x4, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geom::{orth_jacobian, CameraIntrinsics, Mat3, RigidTransform, Rotation, Vec2, Vec3};

#[derive(Clone, Copy, Debug)]
pub struct PnpConfig {
    pub max_iterations: usize,
    /// A final reprojection RMSE above this (pixels) is reported as divergence.
    pub max_rmse_px: f64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_rmse_px: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PnpResult {
    /// Camera-from-model transform.
    pub pose: RigidTransform,
    /// Reprojection RMSE in pixels of `pose`.
    pub rmse: f64,
    /// Reprojection RMSE of the linear initialization.
    pub init_rmse: f64,
    pub iterations: usize,
}

pub const MIN_PNP_POINTS: usize = 4;
const MIN_DLT_POINTS: usize = 6;

pub fn pnp(points3d: &[Vec3], points2d: &[Vec2], k: &CameraIntrinsics) -> Result<PnpResult> {
    pnp_with_config(points3d, points2d, k, &PnpConfig::default())
}

pub fn pnp_with_config(
    points3d: &[Vec3],
    points2d: &[Vec2],
    k: &CameraIntrinsics,
    cfg: &PnpConfig,
) -> Result<PnpResult> {
    if points3d.len() != points2d.len() {
        return Err(Error::LengthMismatch {
            expected: points3d.len(),
            got: points2d.len(),
        });
    }
    let n = points3d.len();
    if n < MIN_PNP_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_PNP_POINTS,
            got: n,
        });
    }
    let rays: Vec<Vec2> = points2d
        .iter()
        .map(|p| Vec2::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy))
        .collect();

    let dlt = if n >= MIN_DLT_POINTS {
        dlt_pose(points3d, &rays).ok()
    } else {
        None
    };
    let init = match dlt {
        Some(pose) => pose,
        None => candidate_search(points3d, &rays, k)?,
    };
    let init_rmse = reprojection_rmse(&init, points3d, points2d, k);
    let (pose, rmse, iterations) = refine(init, init_rmse, points3d, points2d, k, cfg.max_iterations);
    if !(rmse <= cfg.max_rmse_px) {
        return Err(Error::DivergedRefinement { rmse });
    }
    Ok(PnpResult {
        pose,
        rmse,
        init_rmse,
        iterations,
    })
}

/// Root-mean-square reprojection error in pixels; points behind the camera
/// count as a large fixed penalty.
pub fn reprojection_rmse(
    pose: &RigidTransform,
    points3d: &[Vec3],
    points2d: &[Vec2],
    k: &CameraIntrinsics,
) -> f64 {
    let sum: f64 = points3d
        .iter()
        .zip(points2d)
        .map(|(p, uv)| match k.project(&pose.apply(p)) {
            Some(q) => (q - uv).norm_squared(),
            None => 1e12,
        })
        .sum();
    (sum / points3d.len() as f64).sqrt()
}

fn normalize_2d(rays: &[Vec2]) -> (Vec<Vec2>, nalgebra::Matrix3<f64>) {
    let n = rays.len() as f64;
    let c = rays.iter().sum::<Vec2>() / n;
    let mean_d = rays.iter().map(|r| (r - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { 2f64.sqrt() / mean_d } else { 1.0 };
    let t = nalgebra::Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    (rays.iter().map(|r| (r - c) * s).collect(), t)
}

fn normalize_3d(pts: &[Vec3]) -> (Vec<Vec3>, nalgebra::Matrix4<f64>) {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vec3>() / n;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { 3f64.sqrt() / mean_d } else { 1.0 };
    let mut t = nalgebra::Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    (pts.iter().map(|p| (p - c) * s).collect(), t)
}

/// Linear pose from normalized image rays; fails on (near-)degenerate configurations.
fn dlt_pose(points3d: &[Vec3], rays: &[Vec2]) -> Result<RigidTransform> {
    let (xs, t2) = normalize_2d(rays);
    let (ps, t3) = normalize_3d(points3d);
    let n = ps.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, x)) in ps.iter().zip(&xs).enumerate() {
        let h = [p.x, p.y, p.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -x.x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -x.y * h[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (l0, l1, lmax) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[11]],
    );
    if !(l1 > 1e-10 * lmax) || l0 > 0.5 * l1 {
        return Err(Error::DegenerateConfiguration("DLT null space is not one-dimensional"));
    }
    let v = eig.eigenvectors.column(order[0]);
    let pn = Matrix3x4::from_row_slice(v.as_slice());
    let t2_inv = t2
        .try_inverse()
        .ok_or(Error::DegenerateConfiguration("2D normalization"))?;
    let mut p = t2_inv * pn * t3;
    let mut m: Mat3 = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let lambda = svd.singular_values.mean();
    if !(lambda > 0.0) {
        return Err(Error::DegenerateConfiguration("DLT scale"));
    }
    let r = u * v_t;
    if r.determinant() < 0.0 {
        return Err(Error::DegenerateConfiguration("DLT rotation"));
    }
    let t = p.column(3).into_owned() / lambda;
    Ok(RigidTransform::new(Rotation::from_matrix(&r), t))
}

/// Translation minimizing the algebraic reprojection error for a fixed rotation.
fn translation_for(rot: &Rotation, points3d: &[Vec3], rays: &[Vec2]) -> Option<Vec3> {
    let mut ata = Mat3::zeros();
    let mut atb = Vec3::zeros();
    for (p, r) in points3d.iter().zip(rays) {
        let q = rot.rotate(p);
        let rows = [
            (Vec3::new(1.0, 0.0, -r.x), r.x * q.z - q.x),
            (Vec3::new(0.0, 1.0, -r.y), r.y * q.z - q.y),
        ];
        for (row, b) in rows {
            ata += row * row.transpose();
            atb += row * b;
        }
    }
    ata.try_inverse().map(|inv| inv * atb)
}

/// Initialization for few or coplanar points: linear translation for each of
/// a fixed set of candidate rotations, best reprojection error wins.
fn candidate_search(points3d: &[Vec3], rays: &[Vec2], k: &CameraIntrinsics) -> Result<RigidTransform> {
    let pix: Vec<Vec2> = rays
        .iter()
        .map(|r| Vec2::new(r.x * k.fx + k.cx, r.y * k.fy + k.cy))
        .collect();
    let mut best: Option<(f64, RigidTransform)> = None;
    for rot in candidate_rotations() {
        let Some(t) = translation_for(&rot, points3d, rays) else {
            continue;
        };
        let pose = RigidTransform::new(rot, t);
        let e0 = reprojection_rmse(&pose, points3d, &pix, k);
        let (pose, e, _) = refine(pose, e0, points3d, &pix, k, 15);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, pose));
        }
    }
    best.map(|(_, p)| p)
        .ok_or(Error::DegenerateConfiguration("no candidate rotation admits a translation"))
}

fn candidate_rotations() -> Vec<Rotation> {
    let mut out = Vec::new();
    let axes = [
        Vec3::x(),
        Vec3::y(),
        Vec3::z(),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(1.0, 0.0, 1.0),
        Vec3::new(0.0, 1.0, 1.0),
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, 1.0),
        Vec3::new(-1.0, 1.0, 1.0),
        Vec3::new(1.0, 1.0, -1.0),
    ];
    out.push(Rotation::identity());
    for axis in axes {
        for deg in [60.0f64, 120.0, 180.0, 240.0, 300.0] {
            out.push(Rotation::from_axis_angle(&axis, deg.to_radians()));
        }
    }
    out
}

type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;

/// Levenberg-damped Gauss-Newton; returns the refined pose, its RMSE and the
/// number of accepted steps. Never returns a pose worse than `init`.
fn refine(
    init: RigidTransform,
    init_rmse: f64,
    points3d: &[Vec3],
    points2d: &[Vec2],
    k: &CameraIntrinsics,
    max_iterations: usize,
) -> (RigidTransform, f64, usize) {
    let mut pose = init;
    let mut rmse = init_rmse;
    let mut mu = 1e-3;
    let mut accepted = 0;
    let ident = [Vec3::x(), Vec3::y()];
    let (_, jac6) = orth_jacobian(&ident).expect("identity rows are valid");
    for _ in 0..max_iterations {
        let r0 = pose.rotation.matrix();
        let mut h = Mat9::zeros();
        let mut g = Vec9::zeros();
        for (p, uv) in points3d.iter().zip(points2d) {
            let xc = pose.apply(p);
            if xc.z <= 1e-9 {
                continue;
            }
            let iz = 1.0 / xc.z;
            let res = Vec2::new(
                k.fx * xc.x * iz + k.cx - uv.x,
                k.fy * xc.y * iz + k.cy - uv.y,
            );
            let du = Vec3::new(k.fx * iz, 0.0, -k.fx * xc.x * iz * iz);
            let dv = Vec3::new(0.0, k.fy * iz, -k.fy * xc.y * iz * iz);
            let mut ju = Vec9::zeros();
            let mut jv = Vec9::zeros();
            for (c, d) in jac6.iter().enumerate() {
                let dx = r0 * (d * p);
                ju[c] = du.dot(&dx);
                jv[c] = dv.dot(&dx);
            }
            for c in 0..3 {
                ju[6 + c] = du[c];
                jv[6 + c] = dv[c];
            }
            h += ju * ju.transpose() + jv * jv.transpose();
            g += ju * res.x + jv * res.y;
        }
        let scale = h.diagonal().max().max(1e-300);
        let mut improved = false;
        for _ in 0..8 {
            let mut damped = h;
            for i in 0..9 {
                damped[(i, i)] += mu * scale;
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                mu *= 10.0;
                continue;
            };
            let rows = [
                ident[0] + Vec3::new(step[0], step[1], step[2]),
                ident[1] + Vec3::new(step[3], step[4], step[5]),
            ];
            let Ok(dr) = crate::geom::orth_matrix(&rows) else {
                mu *= 10.0;
                continue;
            };
            let cand = RigidTransform::new(
                Rotation::from_matrix(&(r0 * dr)),
                pose.translation + Vec3::new(step[6], step[7], step[8]),
            );
            let e = reprojection_rmse(&cand, points3d, points2d, k);
            if e < rmse {
                let rel = (rmse - e) / rmse.max(1e-300);
                pose = cand;
                rmse = e;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                accepted += 1;
                if rel < 1e-12 {
                    return (pose, rmse, accepted);
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (pose, rmse, accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::geodesic_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rig(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.08..0.08),
                    rng.random_range(-0.08..0.08),
                    rng.random_range(-0.05..0.05),
                )
            })
            .collect()
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::centered(500.0, 640, 480).unwrap()
    }

    fn pose(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::new(
            Rotation::exp(&Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )),
            Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(0.4..0.7)),
        )
    }

    fn project(pose: &RigidTransform, pts: &[Vec3], k: &CameraIntrinsics) -> Vec<Vec2> {
        pts.iter().map(|p| k.project(&pose.apply(p)).unwrap()).collect()
    }

    #[test]
    fn exact_recovery_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = camera();
        for n in [4, 5, 6, 21] {
            let pts = rig(&mut rng, n);
            let truth = pose(&mut rng);
            let uv = project(&truth, &pts, &k);
            let est = pnp(&pts, &uv, &k).unwrap();
            assert!(
                geodesic_angle(&est.pose.rotation, &truth.rotation).to_degrees() < 0.01,
                "n={n}"
            );
            assert!((est.pose.translation - truth.translation).norm() < 1e-4, "n={n}");
            assert!(est.rmse <= est.init_rmse);
        }
    }

    #[test]
    fn coplanar_points_fall_back_to_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = camera();
        let pts: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0))
            .collect();
        let truth = RigidTransform::new(
            Rotation::from_axis_angle(&Vec3::new(1.0, 0.2, 0.0), 0.5),
            Vec3::new(0.01, -0.02, 0.5),
        );
        let est = pnp(&pts, &project(&truth, &pts, &k), &k).unwrap();
        assert!(geodesic_angle(&est.pose.rotation, &truth.rotation).to_degrees() < 0.01);
    }

    #[test]
    fn too_few_points() {
        let k = camera();
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let uv = vec![Vec2::zeros(); 3];
        assert!(matches!(pnp(&pts, &uv, &k), Err(Error::InsufficientPoints { needed: 4, got: 3 })));
    }

    #[test]
    fn noisy_rotation_error_95th_percentile() {
        let k = camera();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut errs = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts = rig(&mut rng, 21);
            let truth = pose(&mut rng);
            let uv: Vec<Vec2> = project(&truth, &pts, &k)
                .into_iter()
                .map(|p| p + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let est = pnp(&pts, &uv, &k).unwrap();
            assert!(est.rmse <= est.init_rmse + 1e-12);
            errs.push(geodesic_angle(&est.pose.rotation, &truth.rotation).to_degrees());
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[94] < 1.0, "p95 = {}", errs[94]);
    }

    #[test]
    fn inconsistent_data_diverges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = camera();
        let pts = rig(&mut rng, 12);
        let uv: Vec<Vec2> = (0..12)
            .map(|_| Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        let cfg = PnpConfig {
            max_rmse_px: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            pnp_with_config(&pts, &uv, &k, &cfg),
            Err(Error::DivergedRefinement { .. })
        ));
    }
}
