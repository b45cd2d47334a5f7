//! Exact nearest-neighbour search over points and triangles, plus
//! area-weighted surface sampling.
//!
//! Ties are always broken towards the smaller index so that results do not
//! depend on tree layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{TriangleMesh, Vec3};

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { dim: usize, val: f64, left: usize, right: usize },
}

/// Static 3D kd-tree with exact queries.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    perm: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = KdTree {
            perm: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let dim = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][dim].total_cmp(&pts[b][dim]).then(a.cmp(&b))
        });
        let val = self.points[self.perm[mid]][dim];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split {
            dim,
            val,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Nearest point with squared distance `<= max_d2`.
    pub fn nearest_within(&self, q: &Vec3, max_d2: f64) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, max_d2);
        self.nearest_rec(0, q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            KdNode::Split {
                dim,
                val,
                left,
                right,
            } => {
                let diff = q[dim] - val;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.knn_rec(0, q, k, &mut out);
        }
        out
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let d = dist2(q, &self.points[i]);
                    let full = out.len() == k;
                    if full {
                        let last = out[k - 1];
                        if d > last.1 || (d == last.1 && i > last.0) {
                            continue;
                        }
                    }
                    let pos = out.partition_point(|&(j, dj)| dj < d || (dj == d && j < i));
                    out.insert(pos, (i, d));
                    out.truncate(k);
                }
            }
            KdNode::Split {
                dim,
                val,
                left,
                right,
            } => {
                let diff = q[dim] - val;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, out);
                if out.len() < k || diff * diff <= out[k - 1].1 {
                    self.knn_rec(far, q, k, out);
                }
            }
        }
    }
}

/// Closest point on triangle `abc` to `p`, with its barycentric coordinates
/// (weights of `a`, `b`, `c`).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Closest point on a mesh: face index, point, barycentrics, squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshHit {
    pub face: usize,
    pub point: Vec3,
    pub bary: [f64; 3],
    pub dist2: f64,
}

#[inline]
fn better(d: f64, f: usize, best: &Option<MeshHit>) -> bool {
    match best {
        None => true,
        Some(b) => d < b.dist2 || (d == b.dist2 && f < b.face),
    }
}

/// Exhaustive closest-point search over all faces.
pub fn closest_on_mesh_brute(mesh: &TriangleMesh, p: &Vec3) -> Option<MeshHit> {
    let mut best = None;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.corners(f);
        let (q, bary) = closest_point_on_triangle(p, &a, &b, &c);
        let d = dist2(p, &q);
        if better(d, f, &best) {
            best = Some(MeshHit {
                face: f,
                point: q,
                bary,
                dist2: d,
            });
        }
    }
    best
}

#[derive(Clone, Debug)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // leaf when `count > 0`: faces `order[first..first + count]`
    first: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles for exact closest-point queries.
#[derive(Clone, Debug)]
pub struct MeshIndex {
    mesh: TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl MeshIndex {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut idx = MeshIndex {
            order: (0..mesh.faces.len()).collect(),
            mesh,
            nodes: Vec::new(),
        };
        let centroids: Vec<Vec3> = (0..idx.mesh.faces.len())
            .map(|f| {
                let [a, b, c] = idx.mesh.corners(f);
                (a + b + c) / 3.0
            })
            .collect();
        idx.build(0, idx.order.len(), &centroids);
        Ok(idx)
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    fn build(&mut self, first: usize, end: usize, centroids: &[Vec3]) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &f in &self.order[first..end] {
            for v in self.mesh.corners(f) {
                lo = lo.inf(&v);
                hi = hi.sup(&v);
            }
            clo = clo.inf(&centroids[f]);
            chi = chi.sup(&centroids[f]);
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            lo,
            hi,
            first,
            count: end - first,
            left: 0,
            right: 0,
        });
        if end - first <= 4 {
            return id;
        }
        let dim = (chi - clo).imax();
        let mid = (first + end) / 2;
        self.order[first..end].select_nth_unstable_by(mid - first, |&a, &b| {
            centroids[a][dim]
                .total_cmp(&centroids[b][dim])
                .then(a.cmp(&b))
        });
        let left = self.build(first, mid, centroids);
        let right = self.build(mid, end, centroids);
        let n = &mut self.nodes[id];
        n.count = 0;
        n.left = left;
        n.right = right;
        id
    }

    fn box_dist2(node: &BvhNode, p: &Vec3) -> f64 {
        let d = (node.lo - p).sup(&Vec3::zeros()).sup(&(p - node.hi));
        d.norm_squared()
    }

    pub fn closest(&self, p: &Vec3) -> MeshHit {
        let mut best = None;
        self.closest_rec(0, p, &mut best);
        best.expect("non-empty mesh")
    }

    fn closest_rec(&self, node: usize, p: &Vec3, best: &mut Option<MeshHit>) {
        let n = &self.nodes[node];
        if n.count > 0 {
            for &f in &self.order[n.first..n.first + n.count] {
                let [a, b, c] = self.mesh.corners(f);
                let (q, bary) = closest_point_on_triangle(p, &a, &b, &c);
                let d = dist2(p, &q);
                if better(d, f, best) {
                    *best = Some(MeshHit {
                        face: f,
                        point: q,
                        bary,
                        dist2: d,
                    });
                }
            }
            return;
        }
        let dl = Self::box_dist2(&self.nodes[n.left], p);
        let dr = Self::box_dist2(&self.nodes[n.right], p);
        let (first, d_first, second, d_second) = if dl <= dr {
            (n.left, dl, n.right, dr)
        } else {
            (n.right, dr, n.left, dl)
        };
        let bound = |b: &Option<MeshHit>| b.map_or(f64::INFINITY, |h| h.dist2);
        if d_first <= bound(best) {
            self.closest_rec(first, p, best);
        }
        if d_second <= bound(best) {
            self.closest_rec(second, p, best);
        }
    }
}

/// A point drawn on a mesh surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
    pub position: Vec3,
}

/// Draws `n` points uniformly by area; deterministic for a given seed.
pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfacePoint>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..n)
        .map(|_| {
            let t = rng.random::<f64>() * acc;
            let face = cdf.partition_point(|&c| c <= t).min(cdf.len() - 1);
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            let bary = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
            let [a, b, c] = mesh.corners(face);
            SurfacePoint {
                face,
                bary,
                position: a * bary[0] + b * bary[1] + c * bary[2],
            }
        })
        .collect();
    Ok(out)
}
