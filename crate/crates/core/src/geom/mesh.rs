use super::{RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Faces with area below this are degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Points with optional per-point unit normals and RGB colors in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub colors: Option<Vec<Vec3>>,
}

impl ColoredPointCloud {
    pub fn new(
        positions: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        colors: Option<Vec<Vec3>>,
    ) -> Result<Self> {
        let n = positions.len();
        if let Some(ns) = &normals {
            if ns.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: ns.len(),
                });
            }
            if let Some(bad) = ns.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidInput(format!(
                    "normal {bad} is not unit length"
                )));
            }
        }
        if let Some(cs) = &colors {
            if cs.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: cs.len(),
                });
            }
        }
        Ok(Self {
            positions,
            normals,
            colors,
        })
    }

    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        Self {
            positions,
            normals: None,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Keeps the points whose flag is set.
    pub fn select(&self, keep: &[bool]) -> ColoredPointCloud {
        let pick = |v: &Vec<Vec3>| -> Vec<Vec3> {
            v.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(p, _)| *p)
                .collect()
        };
        ColoredPointCloud {
            positions: pick(&self.positions),
            normals: self.normals.as_ref().map(pick),
            colors: self.colors.as_ref().map(pick),
        }
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_colors: Option<Vec<Vec3>>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Validates indices and attribute lengths; degenerate faces are an error
    /// unless `allow_degenerate` is set.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        vertex_colors: Option<Vec<Vec3>>,
        vertex_normals: Option<Vec<Vec3>>,
        allow_degenerate: bool,
    ) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput(format!(
                    "face {fi} references a vertex out of range ({n} vertices)"
                )));
            }
        }
        for attr in [&vertex_colors, &vertex_normals].into_iter().flatten() {
            if attr.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: attr.len(),
                });
            }
        }
        let mesh = Self {
            vertices,
            faces,
            vertex_colors,
            vertex_normals,
        };
        if !allow_degenerate {
            if let Some(fi) = (0..mesh.faces.len()).find(|&f| mesh.face_area(f) < DEGENERATE_AREA)
            {
                return Err(Error::InvalidInput(format!("face {fi} is degenerate")));
            }
        }
        Ok(mesh)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unit normal following the counter-clockwise winding; zero for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
            let n = (b - a).cross(&(c - a));
            for &v in f {
                acc[v] += n;
            }
        }
        for n in &mut acc {
            let len = n.norm();
            *n = if len > 0.0 { *n / len } else { Vec3::z() };
        }
        self.vertex_normals = Some(acc);
    }

    /// Interpolated unit normal at barycentric `(u, v, w)` of face `f`, or the
    /// face normal when the mesh has no vertex normals.
    pub fn normal_at(&self, f: usize, bary: &[f64; 3]) -> Vec3 {
        match &self.vertex_normals {
            Some(ns) => {
                let [a, b, c] = self.faces[f];
                let n = ns[a] * bary[0] + ns[b] * bary[1] + ns[c] * bary[2];
                let len = n.norm();
                if len > 1e-300 {
                    n / len
                } else {
                    self.face_normal(f)
                }
            }
            None => self.face_normal(f),
        }
    }

    pub fn color_at(&self, f: usize, bary: &[f64; 3]) -> Option<Vec3> {
        self.vertex_colors.as_ref().map(|cs| {
            let [a, b, c] = self.faces[f];
            cs[a] * bary[0] + cs[b] * bary[1] + cs[c] * bary[2]
        })
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: t.apply_to_points(&self.vertices),
            faces: self.faces.clone(),
            vertex_colors: self.vertex_colors.clone(),
            vertex_normals: self
                .vertex_normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation.rotate(n)).collect()),
        }
    }

    /// Axis-aligned bounds `(min, max)` of the vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Concatenates two meshes into one.
    pub fn merged(&self, other: &TriangleMesh) -> TriangleMesh {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let join = |a: &Option<Vec<Vec3>>, b: &Option<Vec<Vec3>>| match (a, b) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        TriangleMesh {
            vertices,
            faces,
            vertex_colors: join(&self.vertex_colors, &other.vertex_colors),
            vertex_normals: join(&self.vertex_normals, &other.vertex_normals),
        }
    }

    /// Number of edge-connected components of the face set.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut roots: Vec<usize> = self
            .faces
            .iter()
            .map(|f| find(&mut parent, f[0]))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// `V - E + F`, counting each undirected edge once.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let used = {
            let mut v: Vec<usize> = self.faces.iter().flatten().copied().collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        used as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            if j - i != 2 {
                return false;
            }
            i = j;
        }
        !edges.is_empty()
    }
}
