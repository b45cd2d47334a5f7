//! Synthetic ground truth: analytic meshes with procedural color, smooth
//! look-at trajectories, a z-buffer renderer producing images, masks and
//! organized depth clouds, and a rigid 21-joint hand rig.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{
    CameraIntrinsics, Mask, Mat3, OrganizedCloud, PoseSequence, RgbImage, RigidTransform, Rotation,
    TriangleMesh, Vec2, Vec3,
};
use crate::handcam::{HandKeypoints, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeshKind {
    Sphere,
    BumpySphere,
    Box,
    Torus,
}

impl FromStr for MeshKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(MeshKind::Sphere),
            "bumpy_sphere" | "bumpy-sphere" => Ok(MeshKind::BumpySphere),
            "box" => Ok(MeshKind::Box),
            "torus" => Ok(MeshKind::Torus),
            _ => Err(Error::InvalidInput(format!("unknown mesh kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for MeshKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MeshKind::Sphere => "sphere",
            MeshKind::BumpySphere => "bumpy_sphere",
            MeshKind::Box => "box",
            MeshKind::Torus => "torus",
        })
    }
}

/// Smooth color field over model space: a soft 3D checker plus a few
/// random low-frequency sinusoids per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProceduralTexture {
    scale: f64,
    waves: Vec<[(Vec3, f64); 3]>,
}

impl ProceduralTexture {
    pub fn new(scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7E47_u64);
        let waves = (0..3)
            .map(|_| {
                std::array::from_fn(|_| {
                    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                    let freq = rng.random_range(1.0..2.5) * PI;
                    (Vec3::from(dir) * freq, rng.random_range(0.0..TAU))
                })
            })
            .collect();
        Self { scale, waves }
    }

    pub fn color(&self, p: &Vec3) -> Vec3 {
        let q = p / self.scale;
        let k = 2.0 * PI * 0.8;
        let checker = (2.5 * (k * q.x).sin() * (k * q.y).sin() * (k * q.z + 0.4).sin()).tanh();
        let noise: Vec<f64> = self
            .waves
            .iter()
            .map(|ws| ws.iter().map(|(d, ph)| (d.dot(&q) + ph).sin()).sum::<f64>() / 3.0)
            .collect();
        let c = Vec3::new(
            0.5 + 0.25 * checker + 0.17 * noise[0],
            0.5 - 0.2 * checker + 0.17 * noise[1],
            0.5 + 0.12 * checker + 0.2 * noise[2],
        );
        c.map(|v| v.clamp(0.02, 0.98))
    }
}

fn icosphere(levels: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn unit_box(n: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    // vertices live on the integer lattice {0..n}³ surface, welded by lattice key
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |k: [usize; 3], verts: &mut Vec<Vec3>| -> usize {
        *index.entry(k).or_insert_with(|| {
            verts.push(Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64) * (2.0 / n as f64) - Vec3::repeat(1.0));
            verts.len() - 1
        })
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let key = |a: usize, b: usize| {
                        let mut k = [0; 3];
                        k[axis] = side;
                        k[u] = a;
                        k[v] = b;
                        k
                    };
                    let q = [
                        vid(key(i, j), &mut verts),
                        vid(key(i + 1, j), &mut verts),
                        vid(key(i + 1, j + 1), &mut verts),
                        vid(key(i, j + 1), &mut verts),
                    ];
                    // (u, v, axis) is right-handed, so counter-clockwise in (u, v) faces +axis
                    if side == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    (verts, faces)
}

fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut verts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let a = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let b = TAU * j as f64 / nv as f64;
            let r = major + minor * b.cos();
            verts.push(Vec3::new(r * a.cos(), r * a.sin(), minor * b.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    (verts, faces)
}

/// Icosphere of radius `radius` with `20·4^levels` faces and exact radial normals.
pub fn sphere_mesh(radius: f64, levels: usize) -> Result<TriangleMesh> {
    let (v, f) = icosphere(levels);
    let verts = v.iter().map(|p| p * radius).collect();
    TriangleMesh::new(verts, f, None, Some(v), false)
}

/// Radial bump profile of the bumpy sphere.
struct Bumps(Vec<(Vec3, f64)>);

impl Bumps {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB0B5_u64);
        Bumps(
            (0..10)
                .map(|i| {
                    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                    let amp = rng.random_range(0.08..0.16) * if i % 4 == 3 { -0.6 } else { 1.0 };
                    (Vec3::from(dir), amp)
                })
                .collect(),
        )
    }

    fn radius(&self, d: &Vec3) -> f64 {
        const WIDTH2: f64 = 0.3 * 0.3;
        1.0 + self
            .0
            .iter()
            .map(|(c, a)| a * ((d.dot(c) - 1.0) / WIDTH2).exp())
            .sum::<f64>()
    }
}

/// Analytic shape of size `scale` (meters) with procedural vertex colors.
/// Spheres have radius `scale`, the box half-extent `scale`, the torus major
/// radius `scale` and minor radius `0.35·scale`.
pub fn make_mesh(kind: MeshKind, scale: f64, seed: u64) -> Result<TriangleMesh> {
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("scale must be positive".into()));
    }
    let (verts, faces, normals) = match kind {
        MeshKind::Sphere => {
            let (v, f) = icosphere(4);
            let n = v.clone();
            (v.iter().map(|p| p * scale).collect(), f, Some(n))
        }
        MeshKind::BumpySphere => {
            let (v, f) = icosphere(5);
            let bumps = Bumps::new(seed);
            (v.iter().map(|d| d * (scale * bumps.radius(d))).collect(), f, None)
        }
        MeshKind::Box => {
            let (v, f) = unit_box(8);
            (v.iter().map(|p| p * scale).collect::<Vec<_>>(), f, None)
        }
        MeshKind::Torus => {
            let (v, f) = torus(scale, 0.35 * scale, 48, 24);
            (v, f, None)
        }
    };
    let texture = ProceduralTexture::new(scale, seed);
    let colors = verts.iter().map(|p| texture.color(p)).collect();
    let mut mesh = TriangleMesh::new(verts, faces, Some(colors), normals, false)?;
    if mesh.vertex_normals.is_none() {
        mesh.compute_vertex_normals();
    }
    Ok(mesh)
}

/// Camera-from-world pose of a camera at `eye` looking at `target`, image
/// `y` pointing down and world `+z` up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> RigidTransform {
    let forward = (target - eye).normalize();
    let mut up = Vec3::z();
    if forward.cross(&up).norm() < 1e-6 {
        up = Vec3::y();
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = Rotation::from_matrix(&r);
    RigidTransform::new(rotation, -rotation.rotate(eye))
}

fn orbit_eye(radius: f64, azimuth: f64, elevation: f64) -> Vec3 {
    Vec3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    )
}

/// Smooth orbit around the origin: 3.5° of azimuth per frame, a slow
/// elevation oscillation, a small radius wobble and a jittered look-at point.
/// Consecutive frames differ by at most 5° and 2 cm for orbits up to 0.6 m.
pub fn make_trajectory(n_frames: usize, orbit_radius: f64, seed: u64) -> Result<PoseSequence> {
    if !(orbit_radius > 0.0) {
        return Err(Error::InvalidInput("orbit radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0B17_u64);
    let az0 = rng.random_range(0.0..TAU);
    let el0 = rng.random_range(-10f64..10.0).to_radians();
    let phases: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let poses = (0..n_frames)
        .map(|i| {
            let s = i as f64;
            let az = az0 + (3.5f64).to_radians() * s;
            let el = el0 + (15f64).to_radians() * (TAU * s / 64.0 + phases[0]).sin();
            let r = orbit_radius * (1.0 + 0.02 * (TAU * s / 40.0 + phases[1]).sin());
            let target = Vec3::new(
                (TAU * s / 50.0 + phases[2]).sin(),
                (TAU * s / 45.0 + phases[3]).sin(),
                (TAU * s / 55.0 + phases[4]).sin(),
            ) * (0.005 * orbit_radius / 0.5);
            look_at(&orbit_eye(r, az, el), &target)
        })
        .collect();
    Ok(PoseSequence::new(poses))
}

/// Deterministic spiral of `n` views covering elevations in ±58°, all looking at the origin.
pub fn spiral_views(n: usize, radius: f64) -> PoseSequence {
    let golden = PI * (3.0 - 5f64.sqrt());
    let poses = (0..n)
        .map(|i| {
            let h = -0.85 + 1.7 * (i as f64 + 0.5) / n as f64;
            look_at(&orbit_eye(radius, golden * i as f64, h.asin()), &Vec3::zeros())
        })
        .collect();
    PoseSequence::new(poses)
}

/// Magnitudes of the sensor and annotation noise. All values are non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseSpec {
    /// Gaussian noise on depth along each pixel ray, meters.
    pub depth_sigma: f64,
    pub keypoint_sigma_px: f64,
    /// Per-frame pose perturbation as (degrees, meters).
    pub pose_perturb: (f64, f64),
    pub mask_erosion_px: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_sigma >= 0.0
            && self.keypoint_sigma_px >= 0.0
            && self.pose_perturb.0 >= 0.0
            && self.pose_perturb.1 >= 0.0;
        if !ok {
            return Err(Error::InvalidInput("noise magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// A uniformly colored open cylinder attached to the object, standing in for a sleeve.
#[derive(Clone, Debug, PartialEq)]
pub struct Sleeve {
    pub mesh: TriangleMesh,
    pub color: Vec3,
}

impl Sleeve {
    pub const DEFAULT_COLOR: [f64; 3] = [0.05, 0.9, 0.1];

    /// Cylinder of radius `0.45·scale` along model `−z`, from inside the object to `3·scale`.
    pub fn new(scale: f64, color: Vec3) -> Result<Self> {
        let (nu, nz) = (32, 6);
        let (radius, z0, z1) = (0.45 * scale, -0.5 * scale, -3.0 * scale);
        let mut verts = Vec::with_capacity(nu * (nz + 1));
        for k in 0..=nz {
            let z = z0 + (z1 - z0) * k as f64 / nz as f64;
            for i in 0..nu {
                let a = TAU * i as f64 / nu as f64;
                verts.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        let mut faces = Vec::new();
        for k in 0..nz {
            for i in 0..nu {
                let a = k * nu + i;
                let b = k * nu + (i + 1) % nu;
                faces.push([a, a + nu, b]);
                faces.push([b, a + nu, b + nu]);
            }
        }
        let n = verts.len();
        let mesh = TriangleMesh::new(verts, faces, Some(vec![color; n]), None, false)?;
        Ok(Self { mesh, color })
    }
}

/// Flat wall behind the object at constant camera depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Background {
    pub depth: f64,
    pub color: Vec3,
}

/// Object at the world origin seen along a camera trajectory.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub kind: MeshKind,
    pub scale: f64,
    pub mesh: TriangleMesh,
    pub texture: ProceduralTexture,
    /// Camera-from-world (equivalently camera-from-model) poses.
    pub trajectory: PoseSequence,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Spheres are ray-cast exactly instead of rasterized when set.
    pub analytic: bool,
    pub sleeve: Option<Sleeve>,
    pub background: Option<Background>,
    /// Color of pixels that see nothing.
    pub clear_color: Vec3,
}

pub const DEFAULT_WIDTH: usize = 160;
pub const DEFAULT_HEIGHT: usize = 120;
pub const DEFAULT_FOCAL: f64 = 160.0;

impl SynthScene {
    /// Object of size `scale` on an orbit of radius `5·scale`, 160×120 images,
    /// no noise. Spheres are rendered analytically.
    pub fn new(kind: MeshKind, scale: f64, n_frames: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            kind,
            scale,
            mesh: make_mesh(kind, scale, seed)?,
            texture: ProceduralTexture::new(scale, seed),
            trajectory: make_trajectory(n_frames, 5.0 * scale, seed)?,
            intrinsics: CameraIntrinsics::centered(DEFAULT_FOCAL, DEFAULT_WIDTH, DEFAULT_HEIGHT)?,
            noise: NoiseSpec::default(),
            seed,
            analytic: kind == MeshKind::Sphere,
            sleeve: None,
            background: None,
            clear_color: Vec3::repeat(0.1),
        })
    }
}

/// One rendered view. `cloud` holds every depth return (object, sleeve and
/// background), `mask` only the object.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub image: RgbImage,
    pub mask: Mask,
    pub cloud: OrganizedCloud,
}

#[derive(Clone, Copy)]
enum Hit {
    None,
    Object,
    Sleeve,
}

struct ZBuffer {
    depth: Vec<f64>,
    hit: Vec<Hit>,
    point: Vec<Vec3>,
    normal: Vec<Vec3>,
    color: Vec<Vec3>,
}

fn barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

fn rasterize(zb: &mut ZBuffer, mesh: &TriangleMesh, pose: &RigidTransform, k: &CameraIntrinsics, tag: Hit) {
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply(v)).collect();
    let rot = pose.rotation.matrix();
    for (f, &[ia, ib, ic]) in mesh.faces.iter().enumerate() {
        let (a, b, c) = (cam[ia], cam[ib], cam[ic]);
        if a.z < 1e-3 || b.z < 1e-3 || c.z < 1e-3 {
            continue;
        }
        let uv = [a, b, c].map(|p| k.project(&p).expect("in front of the camera"));
        let min_u = uv.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_u = uv.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor();
        let min_v = uv.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_v = uv.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor();
        if max_u < min_u || max_v < min_v {
            continue;
        }
        let area = (uv[1] - uv[0]).perp(&(uv[2] - uv[0]));
        if area.abs() < 1e-12 {
            continue;
        }
        let n = (b - a).cross(&(c - a));
        let max_u = max_u.min(k.width as f64 - 1.0) as usize;
        let max_v = max_v.min(k.height as f64 - 1.0) as usize;
        for row in min_v as usize..=max_v {
            for col in min_u as usize..=max_u {
                let p = Vec2::new(col as f64, row as f64);
                let w0 = (uv[2] - uv[1]).perp(&(p - uv[1])) / area;
                let w1 = (uv[0] - uv[2]).perp(&(p - uv[2])) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let d = k.ray(p.x, p.y);
                let den = n.dot(&d);
                if den.abs() < 1e-15 {
                    continue;
                }
                let s = n.dot(&a) / den;
                let i = row * k.width + col;
                if !(s > 0.0) || s >= zb.depth[i] {
                    continue;
                }
                let x = d * s;
                let bary = barycentric(&x, &a, &b, &c).map(|w| w.clamp(0.0, 1.0));
                zb.depth[i] = s;
                zb.hit[i] = tag;
                zb.point[i] = x;
                zb.normal[i] = rot * mesh.normal_at(f, &bary);
                zb.color[i] = mesh.color_at(f, &bary).unwrap_or(Vec3::repeat(0.5));
            }
        }
    }
}

fn raycast_sphere(zb: &mut ZBuffer, scene: &SynthScene, pose: &RigidTransform) {
    let k = &scene.intrinsics;
    let center = pose.translation;
    let r2 = scene.scale * scene.scale;
    let inv = pose.inverse();
    for row in 0..k.height {
        for col in 0..k.width {
            let d = k.ray(col as f64, row as f64);
            // |s d − c|² = r²
            let (qa, qb, qc) = (d.dot(&d), -2.0 * d.dot(&center), center.dot(&center) - r2);
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let s = (-qb - disc.sqrt()) / (2.0 * qa);
            let i = row * k.width + col;
            if !(s > 0.0) || s >= zb.depth[i] {
                continue;
            }
            let x = d * s;
            zb.depth[i] = s;
            zb.hit[i] = Hit::Object;
            zb.point[i] = x;
            zb.normal[i] = (x - center).normalize();
            zb.color[i] = scene.texture.color(&inv.apply(&x));
        }
    }
}

/// Per-frame RNG derived from the scene seed.
pub fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64).wrapping_add(0x5EED))
}

fn render_frame(scene: &SynthScene, index: usize) -> RenderedFrame {
    let k = &scene.intrinsics;
    let pose = &scene.trajectory.poses[index];
    let n = k.pixel_count();
    let mut zb = ZBuffer {
        depth: vec![f64::INFINITY; n],
        hit: vec![Hit::None; n],
        point: vec![Vec3::zeros(); n],
        normal: vec![Vec3::zeros(); n],
        color: vec![scene.clear_color; n],
    };
    if scene.analytic && scene.kind == MeshKind::Sphere {
        raycast_sphere(&mut zb, scene, pose);
    } else {
        rasterize(&mut zb, &scene.mesh, pose, k, Hit::Object);
    }
    if let Some(sleeve) = &scene.sleeve {
        rasterize(&mut zb, &sleeve.mesh, pose, k, Hit::Sleeve);
    }

    let mut rng = frame_rng(scene.seed, index);
    let noise = Normal::new(0.0, scene.noise.depth_sigma.max(0.0)).expect("finite sigma");
    let mut cloud = OrganizedCloud::empty(k.width, k.height);
    let mut mask = Mask::new(k.width, k.height);
    let mut pixels = zb.color.clone();
    for row in 0..k.height {
        for col in 0..k.width {
            let i = row * k.width + col;
            let (point, normal) = match zb.hit[i] {
                Hit::None => match &scene.background {
                    Some(bg) => {
                        pixels[i] = bg.color;
                        (k.backproject(col as f64, row as f64, bg.depth), -Vec3::z())
                    }
                    None => continue,
                },
                Hit::Object => {
                    mask.bits[i] = true;
                    (zb.point[i], zb.normal[i])
                }
                Hit::Sleeve => (zb.point[i], zb.normal[i]),
            };
            let point = if scene.noise.depth_sigma > 0.0 {
                let z = point.z;
                point * ((z + noise.sample(&mut rng)).max(1e-6) / z)
            } else {
                point
            };
            cloud.positions[i] = point;
            cloud.normals[i] = normal.normalize();
            cloud.colors[i] = pixels[i];
        }
    }
    RenderedFrame {
        image: RgbImage {
            width: k.width,
            height: k.height,
            pixels,
        },
        mask: mask.eroded(scene.noise.mask_erosion_px),
        cloud,
    }
}

/// Renders every frame of the trajectory; frames are independent and rendered in parallel.
pub fn render(scene: &SynthScene) -> Result<Vec<RenderedFrame>> {
    scene.noise.validate()?;
    Ok((0..scene.trajectory.len())
        .into_par_iter()
        .map(|i| render_frame(scene, i))
        .collect())
}

/// Rotates each pose about its model origin by exactly `degrees` around a
/// random axis (`R' = R·δR`) and shifts it by exactly `meters` in a random
/// direction.
pub fn perturb_poses(seq: &PoseSequence, degrees: f64, meters: f64, seed: u64) -> PoseSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E27_u64);
    let mut out = seq.clone();
    for pose in &mut out.poses {
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let d_r = Rotation::from_axis_angle(&Vec3::from(axis), degrees.to_radians());
        *pose = RigidTransform::new(
            pose.rotation.compose(&d_r),
            pose.translation + Vec3::from(dir) * meters,
        );
    }
    out
}

/// A rigid 21-joint hand constellation, wrist at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct HandRig {
    pub joints: [Vec3; NUM_JOINTS],
}

/// Five curled finger chains of four joints each, in wrist-centered meters.
pub fn make_hand_rig(seed: u64) -> HandRig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4A4D_u64);
    let mut joints = [Vec3::zeros(); NUM_JOINTS];
    for finger in 0..5 {
        let (angle, base_len, base_z) = if finger == 0 {
            (-65f64, 0.035, 0.012)
        } else {
            (-30.0 + 15.0 * finger as f64, 0.085, 0.0)
        };
        let angle = (angle + rng.random_range(-3.0..3.0)).to_radians();
        let dir = Vec3::new(angle.sin(), angle.cos(), 0.0);
        let mut p = dir * (base_len + rng.random_range(-0.004..0.004))
            + Vec3::z() * (base_z + rng.random_range(-0.004..0.004));
        let curl = rng.random_range(15f64..35.0).to_radians();
        joints[1 + 4 * finger] = p;
        let mut seg = 0.032 + rng.random_range(-0.004..0.004);
        for k in 1..4 {
            let bend = curl * k as f64;
            p += (dir * bend.cos() - Vec3::z() * bend.sin()) * seg;
            joints[1 + 4 * finger + k] = p;
            seg *= 0.8;
        }
    }
    HandRig { joints }
}

impl HandRig {
    /// Pixel projections of the joints under a camera-from-hand pose.
    pub fn project(&self, pose: &RigidTransform, k: &CameraIntrinsics) -> Option<[Vec2; NUM_JOINTS]> {
        let mut out = [Vec2::zeros(); NUM_JOINTS];
        for (o, j) in out.iter_mut().zip(&self.joints) {
            *o = k.project(&pose.apply(j))?;
        }
        Some(out)
    }

    /// Detector-like observation: projections with pixel noise and the
    /// wrist-centered template with 3D noise (the wrist stays at the origin).
    pub fn observe(
        &self,
        pose: &RigidTransform,
        k: &CameraIntrinsics,
        sigma_px: f64,
        sigma_3d: f64,
        rng: &mut impl Rng,
    ) -> HandKeypoints {
        let Some(mut uv) = self.project(pose, k) else {
            return HandKeypoints::missing();
        };
        let px = Normal::new(0.0, sigma_px.max(0.0)).expect("finite sigma");
        let m = Normal::new(0.0, sigma_3d.max(0.0)).expect("finite sigma");
        for p in &mut uv {
            *p += Vec2::new(px.sample(rng), px.sample(rng));
        }
        let mut j3 = self.joints;
        for p in j3.iter_mut().skip(1) {
            *p += Vec3::new(m.sample(rng), m.sample(rng), m.sample(rng));
        }
        HandKeypoints {
            joints2d: uv,
            joints3d_wrist: j3,
            confidence: [1.0; NUM_JOINTS],
            valid: true,
        }
    }
}

/// Keypoint observations of a hand held rigidly at `hand_in_world` by a
/// camera moving along `cameras`. Frame `i` draws its noise from
/// [`frame_rng`]`(seed, i)`.
pub fn observe_hand_sequence(
    rig: &HandRig,
    hand_in_world: &RigidTransform,
    cameras: &PoseSequence,
    k: &CameraIntrinsics,
    sigma_px: f64,
    sigma_3d: f64,
    seed: u64,
) -> Vec<HandKeypoints> {
    cameras
        .poses
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let mut rng = frame_rng(seed, i);
            rig.observe(&cam.compose(hand_in_world), k, sigma_px, sigma_3d, &mut rng)
        })
        .collect()
}

/// Camera poses re-expressed with the world fixed to the first camera.
pub fn relative_to_first(seq: &PoseSequence) -> PoseSequence {
    let Some(first) = seq.poses.first() else {
        return seq.clone();
    };
    let inv = first.inverse();
    PoseSequence {
        poses: seq.poses.iter().map(|p| p.compose(&inv)).collect(),
        ..seq.clone()
    }
}
