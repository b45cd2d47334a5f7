//! Photometric refinement of per-frame camera poses.
//!
//! Each frame carries a correction `(rot6, t_corr)` applied as
//! `R' = R·orth(rot6)`, `t' = t + t_corr`. The objective is
//!
//! `L = L_rgb + λ_smooth·(L_t + L_r) + λ_wd·L_wd`
//!
//! where `L_rgb` compares colored surface points of the object mesh with the
//! images they project into. Rendering is a point splat with a per-pixel
//! z-buffer: the nearest front-facing point landing in a pixel wins it. The
//! residual of a sampled pixel is `c_w − I(π(X_w))`, the winner's color minus
//! the image bilinearly sampled at the winner's exact projection; pixels
//! without a winner contribute `−I(p)`. Winners are held fixed while a
//! gradient is taken.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{
    orth_jacobian, CameraIntrinsics, Mask, Mat3, PoseSequence, RgbImage, RigidTransform, SixDofParam,
    TriangleMesh, Vec3,
};
use crate::spatial::sample_surface_points;

const CM_PER_M: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub lambda_smooth: f64,
    pub lambda_wd: f64,
    pub iterations: usize,
    pub samples_per_camera: usize,
    pub lr_appearance: f64,
    pub lr_pose: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// `(lambda_smooth, lambda_wd)` pairs; the run with the lowest final
    /// full-image `L_rgb` wins.
    pub grid: Option<Vec<(f64, f64)>>,
    /// Number of colored points drawn on the mesh.
    pub surface_points: usize,
    /// Learning-rate multiplier reached at the last iteration (cosine schedule).
    /// `1.0` keeps the rates constant.
    pub final_lr_factor: f64,
    /// Every this many iterations the colors are reset to the mean observed
    /// color at the current poses. `0` disables the reset.
    pub appearance_refresh: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 1e-2,
            lambda_wd: 1e-4,
            iterations: 250,
            samples_per_camera: 500,
            lr_appearance: 0.5,
            lr_pose: 5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grid: None,
            surface_points: 40_000,
            final_lr_factor: 1.0,
            appearance_refresh: 0,
        }
    }
}

impl RefineConfig {
    pub fn default_grid() -> Vec<(f64, f64)> {
        let mut g = Vec::new();
        for s in [1e-3, 1e-2, 1e-1] {
            for w in [1e-4, 1e-3] {
                g.push((s, w));
            }
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr_appearance,
            self.lr_pose,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.final_lr_factor,
        ];
        let ok = self.lambda_smooth >= 0.0
            && self.lambda_wd >= 0.0
            && positive.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.adam_beta1 < 1.0
            && self.adam_beta2 < 1.0
            && self.iterations >= 1
            && self.samples_per_camera >= 1
            && self.surface_points >= 1
            && self
                .grid
                .as_ref()
                .is_none_or(|g| !g.is_empty() && g.iter().all(|&(s, w)| s >= 0.0 && w >= 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("invalid refine configuration".into()))
        }
    }

    fn lr_factor(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return 1.0;
        }
        let t = iteration as f64 / (self.iterations - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.final_lr_factor + (1.0 - self.final_lr_factor) * cos
    }
}

/// One observed view.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: RgbImage,
    pub mask: Mask,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn new(image: RgbImage, mask: Mask, intrinsics: CameraIntrinsics) -> Result<Self> {
        let dims = [
            (image.width, image.height),
            (mask.width, mask.height),
            (intrinsics.width, intrinsics.height),
        ];
        if dims.iter().any(|d| *d != dims[0]) {
            return Err(Error::InvalidInput(format!(
                "image {}x{}, mask {}x{} and intrinsics {}x{} disagree",
                image.width, image.height, mask.width, mask.height, intrinsics.width, intrinsics.height
            )));
        }
        Ok(Self { image, mask, intrinsics })
    }
}

/// Per-frame pose corrections.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseCorrection {
    pub params: Vec<SixDofParam>,
}

impl PoseCorrection {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![SixDofParam::identity(); n],
        }
    }

    /// Corrected pose of one frame. Identity corrections return `base` unchanged.
    pub fn corrected(&self, i: usize, base: &RigidTransform) -> Result<RigidTransform> {
        let p = &self.params[i];
        if *p == SixDofParam::identity() {
            return Ok(*base);
        }
        Ok(RigidTransform::new(base.rotation.compose(&p.orth()?), base.translation + p.trans))
    }

    pub fn apply(&self, base: &PoseSequence) -> Result<PoseSequence> {
        if base.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: base.len(),
                got: self.params.len(),
            });
        }
        let poses = base
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| self.corrected(i, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoseSequence {
            poses,
            ..base.clone()
        })
    }
}

/// Colored points on the object surface, in model coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceModel {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

impl AppearanceModel {
    /// `n` area-uniform points with outward normals and mid-gray colors.
    pub fn sample(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Self> {
        let samples = sample_surface_points(mesh, n, seed)?;
        let points = samples.iter().map(|s| s.position).collect();
        let normals = samples.iter().map(|s| mesh.normal_at(s.face, &s.bary)).collect();
        Ok(Self {
            points,
            normals,
            colors: vec![Vec3::repeat(0.5); n],
        })
    }

    pub fn clamp(&mut self) {
        for c in &mut self.colors {
            *c = c.map(|v| v.clamp(0.0, 1.0));
        }
    }
}

/// Z-buffer winners of one frame: the point index owning each pixel.
pub type Winners = Vec<Option<usize>>;

/// Splats every front-facing point into the frame and keeps the nearest per pixel.
pub fn splat_winners(app: &AppearanceModel, pose: &RigidTransform, k: &CameraIntrinsics) -> Winners {
    let mut depth = vec![f64::INFINITY; k.pixel_count()];
    let mut win = vec![None; k.pixel_count()];
    let r = pose.rotation.matrix();
    for (j, (x, n)) in app.points.iter().zip(&app.normals).enumerate() {
        let xc = r * x + pose.translation;
        if (r * n).dot(&xc) >= 0.0 {
            continue;
        }
        let Some(uv) = k.project(&xc) else { continue };
        let Some((c, row)) = k.pixel_of(&uv) else { continue };
        let i = row * k.width + c;
        if xc.z < depth[i] {
            depth[i] = xc.z;
            win[i] = Some(j);
        }
    }
    win
}

/// Masked pixel indices of each frame that take part in `L_rgb`.
pub type PixelSets = Vec<Vec<usize>>;

/// Every masked pixel of every frame.
pub fn full_pixel_sets(frames: &[Frame]) -> PixelSets {
    frames.iter().map(|f| f.mask.indices()).collect()
}

/// Up to `n` masked pixels per frame, drawn without replacement.
pub fn sample_pixel_sets(frames: &[Frame], n: usize, seed: u64, iteration: usize) -> PixelSets {
    frames
        .iter()
        .enumerate()
        .map(|(f, frame)| {
            let all = frame.mask.indices();
            let stream = ((iteration as u64) << 32) | f as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), n.min(all.len()))
                .into_iter()
                .map(|i| all[i])
                .collect();
            picked.sort_unstable();
            picked
        })
        .collect()
}

/// Residual of one sampled pixel and, when it has a winner inside the
/// bilinear domain, the image value and gradient at the winner's projection.
struct PixelTerm {
    residual: Vec3,
    winner: Option<usize>,
    projection: Option<(Vec3, Vec3, Vec3, Vec3)>,
}

fn pixel_term(frame: &Frame, app: &AppearanceModel, pose: &RigidTransform, pixel: usize, winner: Option<usize>) -> PixelTerm {
    let observed = frame.image.pixels[pixel];
    let Some(w) = winner else {
        return PixelTerm {
            residual: -observed,
            winner: None,
            projection: None,
        };
    };
    let xc = pose.apply(&app.points[w]);
    let sample = frame
        .intrinsics
        .project(&xc)
        .and_then(|uv| frame.image.bilinear(uv.x, uv.y));
    match sample {
        Some((value, du, dv)) => PixelTerm {
            residual: app.colors[w] - value,
            winner: Some(w),
            projection: Some((xc, value, du, dv)),
        },
        None => PixelTerm {
            residual: app.colors[w] - observed,
            winner: Some(w),
            projection: None,
        },
    }
}

/// `L_rgb` over the given pixel sets, with winners from the current poses.
/// Frames flagged invalid in `poses` are skipped.
pub fn loss_rgb(frames: &[Frame], app: &AppearanceModel, poses: &PoseSequence, pixels: &PixelSets) -> Result<f64> {
    check_lengths(frames, poses)?;
    let per: Vec<f64> = (0..frames.len())
        .into_par_iter()
        .map(|f| {
            if !poses.valid[f] {
                return 0.0;
            }
            let pose = &poses.poses[f];
            let winners = splat_winners(app, pose, &frames[f].intrinsics);
            pixels[f]
                .iter()
                .map(|&p| pixel_term(&frames[f], app, pose, p, winners[p]).residual.norm_squared())
                .sum()
        })
        .collect();
    Ok(per.iter().sum())
}

fn check_lengths(frames: &[Frame], poses: &PoseSequence) -> Result<()> {
    if frames.len() != poses.len() {
        return Err(Error::LengthMismatch {
            expected: poses.len(),
            got: frames.len(),
        });
    }
    Ok(())
}

/// `Σ_interior ‖2t'_i − sg(t'_{i−1} + t'_{i+1})‖ / (2N)`, translations in centimetres.
pub fn loss_smooth_t(poses: &[RigidTransform]) -> f64 {
    smooth_t(poses, None)
}

/// Gradient of [`loss_smooth_t`] with respect to each `t'_i` (meters), with
/// neighbor terms held constant.
pub fn grad_smooth_t(poses: &[RigidTransform]) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); poses.len()];
    smooth_t(poses, Some(&mut g));
    g
}

fn smooth_t(poses: &[RigidTransform], mut grad: Option<&mut Vec<Vec3>>) -> f64 {
    let n = poses.len();
    if n < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 1..n - 1 {
        let d = (poses[i].translation * 2.0 - poses[i - 1].translation - poses[i + 1].translation) * CM_PER_M;
        let norm = d.norm();
        total += norm;
        if let Some(g) = grad.as_deref_mut() {
            if norm > 0.0 {
                g[i] += d / norm * (2.0 * CM_PER_M / (2.0 * n as f64));
            }
        }
    }
    total / (2.0 * n as f64)
}

/// Angle in radians between two rotation matrices with its gradient in the
/// second argument. The gradient is zero where the angle is 0 or π.
fn angle_and_grad(a: &Mat3, b: &Mat3) -> (f64, Mat3) {
    let m = a.transpose() * b;
    let c = 0.5 * (m.trace() - 1.0);
    let v = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = v.norm();
    let theta = s.atan2(c);
    if s == 0.0 {
        return (theta, Mat3::zeros());
    }
    let u = v / s;
    let gm = (u.cross_matrix() * (0.5 * c) - Mat3::identity() * (0.5 * s)) / (s * s + c * c);
    (theta, a * gm)
}

/// `Σ_interior [∠(sg(R'_{i−1}), R'_i) + ∠(R'_i, sg(R'_{i+1}))] / (2N)` in degrees.
pub fn loss_smooth_r(poses: &[RigidTransform]) -> f64 {
    smooth_r(poses, None)
}

/// Gradient of [`loss_smooth_r`] with respect to each rotation matrix `R'_i`.
pub fn grad_smooth_r(poses: &[RigidTransform]) -> Vec<Mat3> {
    let mut g = vec![Mat3::zeros(); poses.len()];
    smooth_r(poses, Some(&mut g));
    g
}

fn smooth_r(poses: &[RigidTransform], mut grad: Option<&mut Vec<Mat3>>) -> f64 {
    let n = poses.len();
    if n < 3 {
        return 0.0;
    }
    let scale = 180.0 / std::f64::consts::PI / (2.0 * n as f64);
    let mats: Vec<Mat3> = poses.iter().map(|p| p.rotation.matrix()).collect();
    let mut total = 0.0;
    for i in 1..n - 1 {
        let (a, ga) = angle_and_grad(&mats[i - 1], &mats[i]);
        let (b, gb) = angle_and_grad(&mats[i + 1], &mats[i]);
        total += a + b;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += (ga + gb) * scale;
        }
    }
    total * scale
}

/// `Σ_i ‖rot6_i − I₂ₓ₃‖² + ‖t_corr_i‖²`.
pub fn loss_wd(corrections: &PoseCorrection) -> f64 {
    corrections
        .params
        .iter()
        .map(|p| (p.rot6[0] - Vec3::x()).norm_squared() + (p.rot6[1] - Vec3::y()).norm_squared() + p.trans.norm_squared())
        .sum()
}

/// Gradient of [`loss_wd`] in the 9-parameter layout of [`SixDofParam::to_array`].
pub fn grad_wd(corrections: &PoseCorrection) -> Vec<[f64; 9]> {
    corrections
        .params
        .iter()
        .map(|p| {
            let mut g = p.to_array();
            g[0] -= 1.0;
            g[4] -= 1.0;
            g.map(|v| 2.0 * v)
        })
        .collect()
}

/// Values of the individual terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub rgb: f64,
    pub smooth_t: f64,
    pub smooth_r: f64,
    pub wd: f64,
    pub total: f64,
}

/// Gradient of the total objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub colors: Vec<Vec3>,
    pub corrections: Vec<[f64; 9]>,
}

/// Per-frame loss, color gradient contributions and pose gradient.
type FrameTerms = (f64, Vec<(usize, Vec3)>, [f64; 9]);

/// The full objective over fixed frames, surface points and base poses.
pub struct Objective<'a> {
    pub frames: &'a [Frame],
    pub base: &'a PoseSequence,
    pub lambda_smooth: f64,
    pub lambda_wd: f64,
}

impl Objective<'_> {
    pub fn new<'a>(frames: &'a [Frame], base: &'a PoseSequence, lambda_smooth: f64, lambda_wd: f64) -> Result<Objective<'a>> {
        check_lengths(frames, base)?;
        Ok(Objective {
            frames,
            base,
            lambda_smooth,
            lambda_wd,
        })
    }

    pub fn corrected(&self, corr: &PoseCorrection) -> Result<PoseSequence> {
        corr.apply(self.base)
    }

    /// Z-buffer winners of every valid frame at the corrected poses.
    pub fn winners(&self, app: &AppearanceModel, corr: &PoseCorrection) -> Result<Vec<Winners>> {
        let poses = self.corrected(corr)?;
        Ok((0..self.frames.len())
            .into_par_iter()
            .map(|f| {
                if poses.valid[f] {
                    splat_winners(app, &poses.poses[f], &self.frames[f].intrinsics)
                } else {
                    Vec::new()
                }
            })
            .collect())
    }

    /// Loss terms and their gradient with the given winners held fixed.
    pub fn evaluate(
        &self,
        app: &AppearanceModel,
        corr: &PoseCorrection,
        winners: &[Winners],
        pixels: &PixelSets,
    ) -> Result<(LossTerms, Gradient)> {
        let n = self.frames.len();
        let poses = self.corrected(corr)?;
        let jacobians = corr
            .params
            .iter()
            .map(|p| orth_jacobian(&p.rot6))
            .collect::<Result<Vec<_>>>()?;

        let per_frame: Vec<FrameTerms> = (0..n)
            .into_par_iter()
            .map(|f| {
                let mut color_grads = Vec::new();
                let mut pose_grad = [0.0; 9];
                if !poses.valid[f] || winners[f].is_empty() {
                    return (0.0, color_grads, pose_grad);
                }
                let frame = &self.frames[f];
                let k = &frame.intrinsics;
                let pose = &poses.poses[f];
                let base_r = self.base.poses[f].rotation.matrix();
                let dr: [Mat3; 6] = std::array::from_fn(|q| base_r * jacobians[f].1[q]);
                let mut loss = 0.0;
                for &p in &pixels[f] {
                    let term = pixel_term(frame, app, pose, p, winners[f][p]);
                    loss += term.residual.norm_squared();
                    let Some(w) = term.winner else { continue };
                    color_grads.push((w, term.residual * 2.0));
                    let Some((xc, _, du, dv)) = term.projection else { continue };
                    let gu = -2.0 * term.residual.dot(&du);
                    let gv = -2.0 * term.residual.dot(&dv);
                    let z = xc.z;
                    let gx = Vec3::new(
                        gu * k.fx / z,
                        gv * k.fy / z,
                        -(gu * k.fx * xc.x + gv * k.fy * xc.y) / (z * z),
                    );
                    let x = app.points[w];
                    for q in 0..6 {
                        pose_grad[q] += gx.dot(&(dr[q] * x));
                    }
                    pose_grad[6] += gx.x;
                    pose_grad[7] += gx.y;
                    pose_grad[8] += gx.z;
                }
                (loss, color_grads, pose_grad)
            })
            .collect();

        let mut colors = vec![Vec3::zeros(); app.colors.len()];
        let mut corrections = vec![[0.0; 9]; n];
        let mut rgb = 0.0;
        for (f, (loss, cg, pg)) in per_frame.into_iter().enumerate() {
            rgb += loss;
            for (w, g) in cg {
                colors[w] += g;
            }
            corrections[f] = pg;
        }

        let smooth_t = loss_smooth_t(&poses.poses);
        let smooth_r = loss_smooth_r(&poses.poses);
        let wd = loss_wd(corr);
        let gt = grad_smooth_t(&poses.poses);
        let gr = grad_smooth_r(&poses.poses);
        let gw = grad_wd(corr);
        for f in 0..n {
            let base_r = self.base.poses[f].rotation.matrix();
            for q in 0..6 {
                let dq = base_r * jacobians[f].1[q];
                corrections[f][q] += self.lambda_smooth * gr[f].component_mul(&dq).sum();
            }
            for a in 0..3 {
                corrections[f][6 + a] += self.lambda_smooth * gt[f][a];
            }
            for q in 0..9 {
                corrections[f][q] += self.lambda_wd * gw[f][q];
            }
        }
        let total = rgb + self.lambda_smooth * (smooth_t + smooth_r) + self.lambda_wd * wd;
        Ok((
            LossTerms {
                rgb,
                smooth_t,
                smooth_r,
                wd,
                total,
            },
            Gradient { colors, corrections },
        ))
    }

    /// Loss terms only, with the given winners held fixed.
    pub fn value(&self, app: &AppearanceModel, corr: &PoseCorrection, winners: &[Winners], pixels: &PixelSets) -> Result<LossTerms> {
        self.evaluate(app, corr, winners, pixels).map(|(l, _)| l)
    }
}

/// Adam with per-scalar state and bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// One line of the optimization trace. Loss values are on the sampled pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub rgb: f64,
    pub smooth_t: f64,
    pub smooth_r: f64,
    pub wd: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub poses: PoseSequence,
    pub appearance: AppearanceModel,
    pub corrections: PoseCorrection,
    pub history: Vec<TraceRecord>,
    pub lambda_smooth: f64,
    pub lambda_wd: f64,
    /// `L_rgb` on every masked pixel before the first and after the last update.
    pub full_rgb_initial: f64,
    pub full_rgb_final: f64,
    /// Frames without masked pixels, excluded from `L_rgb`.
    pub excluded: Vec<usize>,
}

/// Initial colors: mean image color at each point's projection over the
/// frames it wins a pixel in.
pub fn initial_colors(frames: &[Frame], app: &mut AppearanceModel, poses: &PoseSequence) {
    let per: Vec<Vec<(usize, Vec3)>> = (0..frames.len())
        .into_par_iter()
        .map(|f| {
            if !poses.valid[f] {
                return Vec::new();
            }
            let pose = &poses.poses[f];
            let winners = splat_winners(app, pose, &frames[f].intrinsics);
            let mut seen: Vec<(usize, Vec3)> = winners
                .iter()
                .enumerate()
                .filter_map(|(p, w)| {
                    let w = (*w)?;
                    frames[f].mask.bits[p].then(|| {
                        let t = pixel_term(&frames[f], app, pose, p, Some(w));
                        (w, app.colors[w] - t.residual)
                    })
                })
                .collect();
            seen.sort_by_key(|s| s.0);
            seen
        })
        .collect();
    let mut sum = vec![Vec3::zeros(); app.points.len()];
    let mut count = vec![0usize; app.points.len()];
    for list in per {
        for (w, c) in list {
            sum[w] += c;
            count[w] += 1;
        }
    }
    for j in 0..app.points.len() {
        if count[j] > 0 {
            app.colors[j] = sum[j] / count[j] as f64;
        }
    }
    app.clamp();
}

fn run_single(
    frames: &[Frame],
    base: &PoseSequence,
    init_app: &AppearanceModel,
    cfg: &RefineConfig,
    lambda_smooth: f64,
    lambda_wd: f64,
    excluded: &[usize],
) -> Result<RefineOutput> {
    let obj = Objective::new(frames, base, lambda_smooth, lambda_wd)?;
    let n = frames.len();
    let mut app = init_app.clone();
    let mut corr = PoseCorrection::zeros(n);
    let mut color_params: Vec<f64> = app.colors.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
    let mut pose_params: Vec<f64> = corr.params.iter().flat_map(|p| p.to_array()).collect();
    let mut adam_c = Adam::new(color_params.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut adam_p = Adam::new(pose_params.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let full = full_pixel_sets(frames);

    let initial_winners = obj.winners(&app, &corr)?;
    let full_rgb_initial = obj.value(&app, &corr, &initial_winners, &full)?.rgb;
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if cfg.appearance_refresh > 0 && it > 0 && it % cfg.appearance_refresh == 0 {
            initial_colors(frames, &mut app, &obj.corrected(&corr)?);
            color_params = app.colors.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        }
        let pixels = sample_pixel_sets(frames, cfg.samples_per_camera, cfg.seed, it);
        let winners = obj.winners(&app, &corr)?;
        let (terms, grad) = obj.evaluate(&app, &corr, &winners, &pixels)?;
        if !terms.total.is_finite() {
            return Err(Error::DivergedRefinement { rmse: terms.total });
        }
        history.push(TraceRecord {
            iteration: it,
            rgb: terms.rgb,
            smooth_t: terms.smooth_t,
            smooth_r: terms.smooth_r,
            wd: terms.wd,
            total: terms.total,
        });
        let factor = cfg.lr_factor(it);
        let gc: Vec<f64> = grad.colors.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        let gp: Vec<f64> = grad.corrections.iter().flatten().copied().collect();
        adam_c.update(&mut color_params, &gc, cfg.lr_appearance * factor);
        adam_p.update(&mut pose_params, &gp, cfg.lr_pose * factor);
        for (c, chunk) in app.colors.iter_mut().zip(color_params.chunks_exact_mut(3)) {
            for v in chunk.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            *c = Vec3::new(chunk[0], chunk[1], chunk[2]);
        }
        for (p, chunk) in corr.params.iter_mut().zip(pose_params.chunks_exact(9)) {
            *p = SixDofParam::from_array(chunk.try_into().expect("chunk of 9"));
        }
    }
    let final_winners = obj.winners(&app, &corr)?;
    let full_rgb_final = obj.value(&app, &corr, &final_winners, &full)?.rgb;
    Ok(RefineOutput {
        poses: obj.corrected(&corr)?,
        appearance: app,
        corrections: corr,
        history,
        lambda_smooth,
        lambda_wd,
        full_rgb_initial,
        full_rgb_final,
        excluded: excluded.to_vec(),
    })
}

/// Refines `initial` against the frames. With `cfg.grid` set, every pair is
/// run and the one with the lowest final full-image `L_rgb` is returned.
pub fn refine(frames: &[Frame], mesh: &TriangleMesh, initial: &PoseSequence, cfg: &RefineConfig) -> Result<RefineOutput> {
    cfg.validate()?;
    check_lengths(frames, initial)?;
    let mut app = AppearanceModel::sample(mesh, cfg.surface_points, cfg.seed)?;
    initial_colors(frames, &mut app, initial);
    refine_with_appearance(frames, &app, initial, cfg)
}

/// As [`refine`], starting from a given appearance model.
pub fn refine_with_appearance(
    frames: &[Frame],
    appearance: &AppearanceModel,
    initial: &PoseSequence,
    cfg: &RefineConfig,
) -> Result<RefineOutput> {
    cfg.validate()?;
    check_lengths(frames, initial)?;
    let excluded: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.mask.count() == 0)
        .map(|(i, _)| i)
        .collect();
    if !(0..frames.len()).any(|i| initial.valid[i] && !excluded.contains(&i)) {
        return Err(Error::NoValidFrames);
    }
    let pairs = cfg.grid.clone().unwrap_or_else(|| vec![(cfg.lambda_smooth, cfg.lambda_wd)]);
    let mut best: Option<RefineOutput> = None;
    for (s, w) in pairs {
        let run = run_single(frames, initial, appearance, cfg, s, w, &excluded)?;
        if best.as_ref().is_none_or(|b| run.full_rgb_final < b.full_rgb_final) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one grid pair"))
}
