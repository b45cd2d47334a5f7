//! Robust visual hull from silhouettes and camera poses, with isosurface
//! extraction by marching tetrahedra.
//!
//! A voxel center is a *miss* for a camera when it projects outside the
//! silhouette, outside the image, or lies behind the camera. Voxels with at most `alpha` misses are
//! occupied; voxels with misses in `(alpha, beta]` are uncertain and become
//! occupied only when 6-connected to an occupied voxel through other
//! uncertain voxels.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Mask, Mat3, PoseSequence, RigidTransform, TriangleMesh, Vec3};

/// Axis-aligned box, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|k| !(max[k] > min[k])) {
            return Err(Error::EmptyBounds);
        }
        Ok(Self { min, max })
    }

    /// Smallest cube with the same center containing the box.
    pub fn cube(&self) -> Bounds {
        let c = (self.min + self.max) * 0.5;
        let half = (self.max - self.min).max() * 0.5;
        Bounds {
            min: c - Vec3::repeat(half),
            max: c + Vec3::repeat(half),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VhConfig {
    pub resolution: usize,
    /// Defaults to `ceil(N/8)` for `N` valid cameras.
    pub alpha: Option<usize>,
    /// Defaults to `ceil(N/4)`.
    pub beta: Option<usize>,
    pub bounds: Option<Bounds>,
}

impl Default for VhConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            alpha: None,
            beta: None,
            bounds: None,
        }
    }
}

impl VhConfig {
    /// Resolved `(alpha, beta)` for `n` cameras.
    pub fn thresholds(&self, n: usize) -> Result<(usize, usize)> {
        let alpha = self.alpha.unwrap_or(n.div_ceil(8));
        let beta = self.beta.unwrap_or(n.div_ceil(4));
        if alpha == 0 || alpha > beta || beta > n {
            return Err(Error::InvalidInput(format!(
                "need 0 < alpha <= beta <= N, got alpha={alpha} beta={beta} N={n}"
            )));
        }
        Ok((alpha, beta))
    }
}

/// Cubic voxel grid with per-voxel miss and vote counts.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub origin: Vec3,
    pub spacing: f64,
    pub cameras: usize,
    pub alpha: usize,
    pub beta: usize,
    pub misses: Vec<u32>,
    pub votes: Vec<u32>,
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.spacing
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        let r = self.resolution;
        self.center(idx % r, (idx / r) % r, idx / (r * r))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }
}

struct View<'a> {
    pose: &'a RigidTransform,
    mask: &'a Mask,
}

/// Valid views in a canonical order so results do not depend on frame order.
fn canonical_views<'a>(masks: &'a [Mask], poses: &'a PoseSequence, k: &CameraIntrinsics) -> Result<Vec<View<'a>>> {
    if masks.len() != poses.len() {
        return Err(Error::LengthMismatch {
            expected: poses.len(),
            got: masks.len(),
        });
    }
    if let Some(m) = masks.iter().find(|m| m.width != k.width || m.height != k.height) {
        return Err(Error::InvalidInput(format!(
            "mask is {}x{}, intrinsics expect {}x{}",
            m.width, m.height, k.width, k.height
        )));
    }
    let mut views: Vec<View> = (0..masks.len())
        .filter(|&i| poses.valid[i])
        .map(|i| View {
            pose: &poses.poses[i],
            mask: &masks[i],
        })
        .collect();
    let key = |v: &View| {
        let q = v.pose.rotation.wxyz();
        let t = v.pose.translation;
        [t.x, t.y, t.z, q[0], q[1], q[2], q[3]].map(f64::to_bits)
    };
    views.sort_by_key(key);
    if views.len() < 3 {
        return Err(Error::NoValidFrames);
    }
    Ok(views)
}

/// `(misses, votes)` of a point over all views.
fn count(p: &Vec3, views: &[View], k: &CameraIntrinsics) -> (u32, u32) {
    let (mut misses, mut votes) = (0, 0);
    for v in views {
        let x = v.pose.apply(p);
        let pixel = k.project(&x).and_then(|uv| k.pixel_of(&uv));
        match pixel {
            Some((c, r)) if v.mask.get(c, r) => votes += 1,
            _ => misses += 1,
        }
    }
    (misses, votes)
}

fn carve_views(views: &[View], k: &CameraIntrinsics, bounds: &Bounds, resolution: usize, alpha: usize, beta: usize) -> VoxelGrid {
    let cube = bounds.cube();
    let spacing = (cube.max.x - cube.min.x) / resolution as f64;
    let mut grid = VoxelGrid {
        resolution,
        origin: cube.min,
        spacing,
        cameras: views.len(),
        alpha,
        beta,
        misses: Vec::new(),
        votes: Vec::new(),
        occupied: Vec::new(),
    };
    let n = resolution.pow(3);
    let counts: Vec<(u32, u32)> = (0..n)
        .into_par_iter()
        .map(|idx| count(&grid.center_of(idx), views, k))
        .collect();
    grid.misses = counts.iter().map(|c| c.0).collect();
    grid.votes = counts.iter().map(|c| c.1).collect();
    let (a, b) = (alpha as u32, beta as u32);
    let mut occupied: Vec<bool> = grid.misses.iter().map(|&m| m <= a).collect();
    let uncertain: Vec<bool> = grid.misses.iter().map(|&m| m > a && m <= b).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| occupied[i]).collect();
    let r = resolution;
    while let Some(idx) = queue.pop_front() {
        let (i, j, kk) = (idx % r, (idx / r) % r, idx / (r * r));
        let mut visit = |ni: usize, nj: usize, nk: usize| {
            let nidx = (nk * r + nj) * r + ni;
            if uncertain[nidx] && !occupied[nidx] {
                occupied[nidx] = true;
                queue.push_back(nidx);
            }
        };
        if i > 0 {
            visit(i - 1, j, kk);
        }
        if i + 1 < r {
            visit(i + 1, j, kk);
        }
        if j > 0 {
            visit(i, j - 1, kk);
        }
        if j + 1 < r {
            visit(i, j + 1, kk);
        }
        if kk > 0 {
            visit(i, j, kk - 1);
        }
        if kk + 1 < r {
            visit(i, j, kk + 1);
        }
    }
    grid.occupied = occupied;
    grid
}

const COARSE_RESOLUTION: usize = 32;

/// Bounds of the silhouette-consistent region: a cube around the point
/// closest to all silhouette-centroid rays, carved coarsely, then the
/// occupied box padded by 5% and one coarse voxel.
fn auto_bounds(views: &[View], k: &CameraIntrinsics, alpha: usize, beta: usize) -> Result<Bounds> {
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    let mut centers = Vec::with_capacity(views.len());
    for v in views {
        let idx = v.mask.indices();
        let (u, w) = if idx.is_empty() {
            (k.cx, k.cy)
        } else {
            let n = idx.len() as f64;
            (
                idx.iter().map(|&i| (i % k.width) as f64).sum::<f64>() / n,
                idx.iter().map(|&i| (i / k.width) as f64).sum::<f64>() / n,
            )
        };
        let dir = v.pose.rotation.inverse().rotate(&k.ray(u, w)).normalize();
        let c = v.pose.center();
        let proj = Mat3::identity() - dir * dir.transpose();
        a += proj;
        b += proj * c;
        centers.push(c);
    }
    let focus = a.try_inverse().ok_or(Error::EmptyBounds)? * b;
    let nearest = centers
        .iter()
        .map(|c| (c - focus).norm())
        .fold(f64::INFINITY, f64::min);
    let fov = (k.width as f64 / (2.0 * k.fx)).max(k.height as f64 / (2.0 * k.fy));
    let half = (nearest * fov).min(0.9 * nearest);
    if !(half > 0.0) {
        return Err(Error::EmptyBounds);
    }
    let start = Bounds::new(focus - Vec3::repeat(half), focus + Vec3::repeat(half))?;
    let coarse = carve_views(views, k, &start, COARSE_RESOLUTION, alpha, beta);
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (idx, _) in coarse.occupied.iter().enumerate().filter(|(_, &o)| o) {
        let c = coarse.center_of(idx);
        lo = lo.inf(&(c - Vec3::repeat(0.5 * coarse.spacing)));
        hi = hi.sup(&(c + Vec3::repeat(0.5 * coarse.spacing)));
    }
    if !(lo.x <= hi.x) {
        return Err(Error::EmptyBounds);
    }
    let pad = (hi - lo) * 0.05 + Vec3::repeat(coarse.spacing);
    Bounds::new(lo - pad, hi + pad)
}

/// Carves a voxel grid from silhouettes of the valid frames.
pub fn carve(masks: &[Mask], poses: &PoseSequence, k: &CameraIntrinsics, cfg: &VhConfig) -> Result<VoxelGrid> {
    if cfg.resolution < 16 {
        return Err(Error::InvalidInput("resolution must be >= 16".into()));
    }
    let views = canonical_views(masks, poses, k)?;
    let (alpha, beta) = cfg.thresholds(views.len())?;
    let bounds = match cfg.bounds {
        Some(b) => b,
        None => auto_bounds(&views, k, alpha, beta)?,
    };
    Ok(carve_views(&views, k, &bounds, cfg.resolution, alpha, beta))
}

// cube corner c has offsets (c & 1, (c >> 1) & 1, (c >> 2) & 1)
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Boundary surface of the occupied voxels. Vertices sit where the
/// occupancy indicator (+1 inside, −1 outside) interpolates to zero along
/// voxel-center edges; faces are oriented outward. The grid is padded with
/// empty voxels, so the surface is closed.
pub fn extract_mesh(grid: &VoxelGrid) -> Result<TriangleMesh> {
    let occ = grid.occupied_count();
    if occ == 0 || occ == grid.occupied.len() {
        return Err(Error::DegenerateField);
    }
    let r = grid.resolution;
    let p = r + 2;
    let inside = |i: usize, j: usize, k: usize| -> bool {
        if i == 0 || j == 0 || k == 0 || i > r || j > r || k > r {
            return false;
        }
        grid.occupied[grid.index(i - 1, j - 1, k - 1)]
    };
    let node = |i: usize, j: usize, k: usize| (k * p + j) * p + i;
    let position = |n: usize| {
        let (i, j, k) = (n % p, (n / p) % p, n / (p * p));
        grid.origin + Vec3::new(i as f64 - 0.5, j as f64 - 0.5, k as f64 - 0.5) * grid.spacing
    };
    let field = |inside: bool| if inside { 1.0 } else { -1.0 };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut vertex_on = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (fa, fb) = (field(true), field(false));
            let t = fa / (fa - fb);
            vertices.push(position(key.0) * (1.0 - t) + position(key.1) * t);
            vertices.len() - 1
        })
    };

    for k in 0..p - 1 {
        for j in 0..p - 1 {
            for i in 0..p - 1 {
                let corners: [usize; 8] = std::array::from_fn(|c| node(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)));
                let ins: [bool; 8] = std::array::from_fn(|c| inside(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)));
                if ins.iter().all(|&x| x) || ins.iter().all(|&x| !x) {
                    continue;
                }
                for tet in TETS {
                    let v = tet.map(|c| corners[c]);
                    let s = tet.map(|c| ins[c]);
                    let inn: Vec<usize> = (0..4).filter(|&q| s[q]).collect();
                    let out: Vec<usize> = (0..4).filter(|&q| !s[q]).collect();
                    let tris: Vec<[(usize, usize); 3]> = match inn.len() {
                        1 => vec![[(inn[0], out[0]), (inn[0], out[1]), (inn[0], out[2])]],
                        3 => vec![[(inn[0], out[0]), (inn[1], out[0]), (inn[2], out[0])]],
                        2 => {
                            let (a, b, c, d) = (inn[0], inn[1], out[0], out[1]);
                            vec![[(a, c), (a, d), (b, d)], [(a, c), (b, d), (b, c)]]
                        }
                        _ => continue,
                    };
                    let mean = |ids: &[usize]| ids.iter().map(|&q| position(v[q])).sum::<Vec3>() / ids.len() as f64;
                    let outward = mean(&out) - mean(&inn);
                    for tri in tris {
                        let mut f = tri.map(|(x, y)| vertex_on(v[x], v[y], &mut vertices));
                        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                        if n.dot(&outward) < 0.0 {
                            f.swap(1, 2);
                        }
                        faces.push(f);
                    }
                }
            }
        }
    }
    let mut mesh = TriangleMesh::new(vertices, faces, None, None, true)?;
    mesh.compute_vertex_normals();
    Ok(mesh)
}

/// Outcome of one reconstruction attempt.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub mesh: Option<TriangleMesh>,
    pub grid: Option<VoxelGrid>,
    /// Error message when the attempt failed.
    pub failure: Option<String>,
}

impl Reconstruction {
    pub fn succeeded(&self) -> bool {
        self.mesh.is_some()
    }
}

/// Carve then extract. Failures are recorded rather than returned.
pub fn reconstruct(masks: &[Mask], poses: &PoseSequence, k: &CameraIntrinsics, cfg: &VhConfig) -> Reconstruction {
    let run = || -> Result<(VoxelGrid, TriangleMesh)> {
        let grid = carve(masks, poses, k, cfg)?;
        let mesh = extract_mesh(&grid)?;
        Ok((grid, mesh))
    };
    match run() {
        Ok((grid, mesh)) => Reconstruction {
            mesh: Some(mesh),
            grid: Some(grid),
            failure: None,
        },
        Err(e) => Reconstruction {
            mesh: None,
            grid: None,
            failure: Some(e.to_string()),
        },
    }
}

/// Percentage of successful reconstructions.
pub fn rec_rate(runs: &[Reconstruction]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    100.0 * runs.iter().filter(|r| r.succeeded()).count() as f64 / runs.len() as f64
}
