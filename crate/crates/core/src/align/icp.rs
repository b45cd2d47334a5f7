//! Trimmed rigid ICP of a point cloud against a triangle mesh.
//!
//! The mesh is resampled once into a dense point set held in a kd-tree that
//! bounds the correspondence radius; matches are exact closest surface
//! points. The worst `trim_fraction`
//! of correspondences are dropped every iteration. An iterate that would
//! increase the trimmed residual is rejected and the loop stops, so the
//! residual history is non-increasing.

use nalgebra::{Matrix6, Vector6};

use super::umeyama;
use crate::error::{Error, Result};
use crate::geom::{ColoredPointCloud, PoseSequence, RigidTransform, Rotation, TriangleMesh, Vec3};
use crate::spatial::{sample_surface_points, KdTree, MeshIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcpMode {
    PointToPoint,
    PointToPlane,
}

#[derive(Clone, Copy, Debug)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Meters.
    pub correspondence_radius: f64,
    pub trim_fraction: f64,
    /// Stop when an update moves the source by less than this (meters).
    pub convergence_eps: f64,
    pub mode: IcpMode,
    /// Mesh samples per source point (at least 4).
    pub sample_density: f64,
    pub seed: u64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            correspondence_radius: 0.05,
            trim_fraction: 0.2,
            convergence_eps: 1e-5,
            mode: IcpMode::PointToPlane,
            sample_density: 4.0,
            seed: 0,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return Err(Error::InvalidInput(format!(
                "trim_fraction must be in [0, 1), got {}",
                self.trim_fraction
            )));
        }
        if !(self.correspondence_radius > 0.0) {
            return Err(Error::InvalidInput(
                "correspondence_radius must be positive".into(),
            ));
        }
        if !(self.sample_density >= 4.0) {
            return Err(Error::InvalidInput("sample_density must be >= 4".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Maps source points into the mesh frame.
    pub transform: RigidTransform,
    /// Trimmed RMS point-to-surface distance at `transform` (meters).
    pub residual: f64,
    /// Trimmed residual of every accepted iterate, starting with `init`.
    pub history: Vec<f64>,
}

/// A mesh prepared for correspondence search: a dense resampling in a
/// kd-tree rejects far points cheaply, an exact index finds the match.
pub struct IcpTarget {
    index: MeshIndex,
    tree: KdTree,
    gap: f64,
}

impl IcpTarget {
    pub fn new(mesh: &TriangleMesh, samples: usize, seed: u64) -> Result<Self> {
        let samples = samples.max(1);
        let pts = sample_surface_points(mesh, samples, seed)?;
        let tree = KdTree::new(pts.into_iter().map(|s| s.position).collect());
        // generous bound on the distance from a surface point to its nearest sample
        let gap = 4.0 * (mesh.total_area() / samples as f64).sqrt();
        Ok(Self {
            index: MeshIndex::new(mesh.clone())?,
            tree,
            gap,
        })
    }

    /// Exact closest surface point within `radius`, with its face normal.
    fn correspond(&self, y: &Vec3, radius: f64) -> Option<(Vec3, Vec3, f64)> {
        let gate = radius + self.gap;
        self.tree.nearest_within(y, gate * gate)?;
        let hit = self.index.closest(y);
        (hit.dist2 <= radius * radius).then(|| (hit.point, self.index.mesh().face_normal(hit.face), hit.dist2))
    }
}

struct Matches {
    src: Vec<Vec3>,
    moved: Vec<Vec3>,
    dst: Vec<Vec3>,
    normals: Vec<Vec3>,
    residual: f64,
}

fn gather(
    target: &IcpTarget,
    source: &[Vec3],
    t: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<Matches> {
    let mut all: Vec<(f64, usize, Vec3, Vec3, Vec3)> = source
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let y = t.apply(x);
            target
                .correspond(&y, cfg.correspondence_radius)
                .map(|(p, n, d)| (d, i, y, p, n))
        })
        .collect();
    if all.len() < 3 {
        return Err(Error::NoCorrespondences);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = (((1.0 - cfg.trim_fraction) * all.len() as f64).ceil() as usize).clamp(3, all.len());
    all.truncate(keep);
    let residual = (all.iter().map(|m| m.0).sum::<f64>() / keep as f64).sqrt();
    let mut m = Matches {
        src: Vec::with_capacity(keep),
        moved: Vec::with_capacity(keep),
        dst: Vec::with_capacity(keep),
        normals: Vec::with_capacity(keep),
        residual,
    };
    for (_, i, y, p, n) in all {
        m.src.push(source[i]);
        m.moved.push(y);
        m.dst.push(p);
        m.normals.push(n);
    }
    Ok(m)
}

fn point_to_plane_step(m: &Matches) -> Option<RigidTransform> {
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for ((y, p), n) in m.moved.iter().zip(&m.dst).zip(&m.normals) {
        let c = y.cross(n);
        let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        let r = n.dot(&(y - p));
        h += j * j.transpose();
        g += j * r;
    }
    let damp = 1e-9 * h.trace().max(1e-300) / 6.0;
    for i in 0..6 {
        h[(i, i)] += damp;
    }
    let x = h.cholesky()?.solve(&(-g));
    let w = Vec3::new(x[0], x[1], x[2]);
    let v = Vec3::new(x[3], x[4], x[5]);
    Some(RigidTransform::new(Rotation::exp(&w), v))
}

fn spread(points: &[Vec3]) -> f64 {
    let c = points.iter().sum::<Vec3>() / points.len().max(1) as f64;
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len().max(1) as f64).sqrt()
}

/// Registers `source` to `target_mesh`, starting from `init` (mesh-from-source).
pub fn icp(
    source: &ColoredPointCloud,
    target_mesh: &TriangleMesh,
    init: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidInput("empty source cloud".into()));
    }
    let samples = (cfg.sample_density * source.len() as f64).ceil() as usize;
    let target = IcpTarget::new(target_mesh, samples, cfg.seed)?;
    icp_with_target(&source.positions, &target, init, cfg)
}

pub fn icp_with_target(
    source: &[Vec3],
    target: &IcpTarget,
    init: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    let radius = spread(source).max(1e-6);
    let mut t = *init;
    let mut m = gather(target, source, &t, cfg)?;
    let mut history = vec![m.residual];
    for _ in 0..cfg.max_iterations {
        let cand = match cfg.mode {
            IcpMode::PointToPoint => umeyama(&m.src, &m.dst, false).ok().map(|s| s.rigid()),
            IcpMode::PointToPlane => point_to_plane_step(&m).map(|d| d.compose(&t)),
        };
        let Some(cand) = cand else { break };
        let next = match gather(target, source, &cand, cfg) {
            Ok(n) => n,
            Err(_) => break,
        };
        if next.residual > m.residual {
            break;
        }
        let delta = cand.compose(&t.inverse());
        let moved = delta.translation.norm() + delta.rotation.angle() * radius;
        t = cand;
        m = next;
        history.push(m.residual);
        if moved < cfg.convergence_eps {
            break;
        }
    }
    Ok(IcpResult {
        transform: t,
        residual: m.residual,
        history,
    })
}

/// Chained ICP over a sequence. Poses are camera-from-model; each frame is
/// initialized with the last valid frame's solution. Empty frames or frames
/// without correspondences are marked invalid and carry the last valid pose.
pub fn sequential_icp(
    frames: &[ColoredPointCloud],
    mesh: &TriangleMesh,
    first_init: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<PoseSequence> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames".into()));
    }
    let largest = frames.iter().map(|f| f.len()).max().unwrap_or(0).max(1);
    let samples = (cfg.sample_density * largest as f64).ceil() as usize;
    let target = IcpTarget::new(mesh, samples, cfg.seed)?;

    let mut current = first_init.inverse();
    let mut poses = Vec::with_capacity(frames.len());
    let mut valid = Vec::with_capacity(frames.len());
    let mut residuals = Vec::with_capacity(frames.len());
    for frame in frames {
        let fit = if frame.is_empty() {
            None
        } else {
            icp_with_target(&frame.positions, &target, &current, cfg).ok()
        };
        match fit {
            Some(r) => {
                current = r.transform;
                valid.push(true);
                residuals.push(r.residual);
            }
            None => {
                valid.push(false);
                residuals.push(f64::NAN);
            }
        }
        poses.push(current.inverse());
    }
    let mut seq = PoseSequence::with_validity(poses, valid)?;
    seq.residuals = Some(residuals);
    Ok(seq)
}
