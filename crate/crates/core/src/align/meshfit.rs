//! Normal-augmented point-to-mesh distance and the two-mesh registration
//! objective built on it.
//!
//! For a surface sample `x` with normal `n_x` and a mesh `M`,
//! `d(x, M) = ‖x − p‖² + λ‖n_x − n_p‖²` where `p` is the Euclidean closest
//! point of `M` and `n_p` the barycentric interpolation of `M`'s vertex
//! normals at `p`, renormalized. The objective averages
//! `min(d(x, A), d(x, B))` over samples drawn from a reference mesh.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{orth_jacobian, orth_matrix, RigidTransform, Rotation, TriangleMesh, Vec3};
use crate::spatial::{closest_on_mesh_brute, sample_surface_points, MeshHit, MeshIndex};

#[derive(Clone, Copy, Debug)]
pub struct MeshFitConfig {
    /// Weight of the normal term, m² (1 mm² by default).
    pub lambda_normal: f64,
    pub num_samples: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for MeshFitConfig {
    fn default() -> Self {
        Self {
            lambda_normal: 1e-6,
            num_samples: 30_000,
            seed: 0,
            max_iterations: 50,
        }
    }
}

impl MeshFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_normal >= 0.0) || self.num_samples == 0 {
            return Err(Error::InvalidInput(
                "lambda_normal must be >= 0 and num_samples > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
}

impl SurfaceSample {
    pub fn new(position: Vec3, normal: Vec3) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("sample normal is not unit length".into()));
        }
        Ok(Self { position, normal })
    }
}

/// Area-uniform samples with interpolated normals, drawn with `cfg.seed`.
pub fn sample_with_normals(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    Ok(sample_surface_points(mesh, n, seed)?
        .into_iter()
        .map(|s| SurfaceSample {
            position: s.position,
            normal: mesh.normal_at(s.face, &s.bary),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMeshDistance {
    /// Normal-augmented squared distance, m².
    pub d: f64,
    pub closest: Vec3,
    pub normal: Vec3,
    pub face: usize,
}

fn augmented(x: &SurfaceSample, mesh: &TriangleMesh, hit: &MeshHit, lambda: f64) -> PointMeshDistance {
    let n_p = mesh.normal_at(hit.face, &hit.bary);
    PointMeshDistance {
        d: hit.dist2 + lambda * (x.normal - n_p).norm_squared(),
        closest: hit.point,
        normal: n_p,
        face: hit.face,
    }
}

/// Exhaustive evaluation of `d(x, mesh)`.
pub fn point_mesh_distance(x: &SurfaceSample, mesh: &TriangleMesh, lambda: f64) -> Result<PointMeshDistance> {
    let hit = closest_on_mesh_brute(mesh, &x.position).ok_or(Error::EmptyMesh)?;
    Ok(augmented(x, mesh, &hit, lambda))
}

/// Accelerated `d(x, mesh)` over a prebuilt index; identical results to
/// [`point_mesh_distance`].
pub fn indexed_distance(x: &SurfaceSample, index: &MeshIndex, lambda: f64) -> PointMeshDistance {
    let hit = index.closest(&x.position);
    augmented(x, index.mesh(), &hit, lambda)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Mean over samples of `min(d(x, A), d(x, B))`.
pub fn two_mesh_objective(
    samples: &[SurfaceSample],
    mesh_a: &TriangleMesh,
    mesh_b: &TriangleMesh,
    cfg: &MeshFitConfig,
) -> Result<f64> {
    cfg.validate()?;
    let a = MeshIndex::new(mesh_a.clone())?;
    let b = MeshIndex::new(mesh_b.clone())?;
    Ok(two_mesh_objective_indexed(samples, &a, &b, cfg.lambda_normal))
}

pub fn two_mesh_objective_indexed(samples: &[SurfaceSample], a: &MeshIndex, b: &MeshIndex, lambda: f64) -> f64 {
    let per: Vec<f64> = samples
        .par_iter()
        .map(|x| indexed_distance(x, a, lambda).d.min(indexed_distance(x, b, lambda).d))
        .collect();
    mean(&per)
}

#[derive(Clone, Debug)]
pub struct MeshFitResult {
    /// Pose applied to the movable mesh.
    pub transform: RigidTransform,
    pub objective: f64,
    pub initial_objective: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Sample `x` expressed in the movable mesh's local frame.
fn to_local(t_inv: &RigidTransform, x: &SurfaceSample) -> SurfaceSample {
    SurfaceSample {
        position: t_inv.apply(&x.position),
        normal: t_inv.rotation.rotate(&x.normal),
    }
}

struct Eval {
    objective: f64,
    // per sample: Some(hit on movable) when the movable mesh is the closer one
    movable_hits: Vec<Option<PointMeshDistance>>,
}

fn evaluate(
    samples: &[SurfaceSample],
    fixed_d: &[f64],
    movable: &MeshIndex,
    t: &RigidTransform,
    lambda: f64,
) -> Eval {
    let t_inv = t.inverse();
    let hits: Vec<PointMeshDistance> = samples
        .par_iter()
        .map(|x| indexed_distance(&to_local(&t_inv, x), movable, lambda))
        .collect();
    let mut per = Vec::with_capacity(samples.len());
    let mut movable_hits = Vec::with_capacity(samples.len());
    for (h, &fd) in hits.into_iter().zip(fixed_d) {
        if h.d <= fd {
            per.push(h.d);
            movable_hits.push(Some(h));
        } else {
            per.push(fd);
            movable_hits.push(None);
        }
    }
    Eval {
        objective: mean(&per),
        movable_hits,
    }
}

type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;

/// Rigidly poses `movable` to minimize [`two_mesh_objective`] against `fixed`.
///
/// Damped Gauss-Newton on the 6D rotation parametrization plus translation,
/// linearizing the position term point-to-plane; a step is accepted only if
/// the exact objective does not increase.
pub fn fit_mesh_pose(
    movable: &TriangleMesh,
    fixed: &TriangleMesh,
    samples: &[SurfaceSample],
    init: &RigidTransform,
    cfg: &MeshFitConfig,
) -> Result<MeshFitResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let lambda = cfg.lambda_normal;
    let mov = MeshIndex::new(movable.clone())?;
    let fix = MeshIndex::new(fixed.clone())?;
    let fixed_d: Vec<f64> = samples
        .par_iter()
        .map(|x| indexed_distance(x, &fix, lambda).d)
        .collect();

    let mut t = *init;
    let mut cur = evaluate(samples, &fixed_d, &mov, &t, lambda);
    if !cur.objective.is_finite() {
        return Err(Error::DivergedRefinement { rmse: cur.objective });
    }
    let initial_objective = cur.objective;
    let mut history = vec![cur.objective];
    let ident = [Vec3::x(), Vec3::y()];
    let (_, jac6) = orth_jacobian(&ident).expect("identity rows are valid");
    let sqrt_l = lambda.sqrt();
    let mut mu = 1e-4;

    for _ in 0..cfg.max_iterations {
        let r0 = t.rotation.matrix();
        let mut h = Mat9::zeros();
        let mut g = Vec9::zeros();
        for (x, hit) in samples.iter().zip(&cur.movable_hits) {
            let Some(hit) = hit else { continue };
            let p = hit.closest;
            let world_p = r0 * p + t.translation;
            let world_n = r0 * hit.normal;
            // position: plane residual along the surface normal
            let r = world_n.dot(&(world_p - x.position));
            let mut j = Vec9::zeros();
            for (c, d) in jac6.iter().enumerate() {
                j[c] = world_n.dot(&(r0 * (d * p)));
            }
            for c in 0..3 {
                j[6 + c] = world_n[c];
            }
            h += j * j.transpose();
            g += j * r;
            if lambda > 0.0 {
                // normal term: sqrt(λ)(R n_p − n_x), three residuals
                let rn = (world_n - x.normal) * sqrt_l;
                let dn: Vec<Vec3> = jac6.iter().map(|d| r0 * (d * hit.normal) * sqrt_l).collect();
                for row in 0..3 {
                    let mut jr = Vec9::zeros();
                    for c in 0..6 {
                        jr[c] = dn[c][row];
                    }
                    h += jr * jr.transpose();
                    g += jr * rn[row];
                }
            }
        }
        let scale = h.diagonal().max();
        if !(scale > 0.0) {
            break;
        }
        let mut accepted = false;
        for _ in 0..10 {
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
            let Ok(dr) = orth_matrix(&rows) else {
                mu *= 10.0;
                continue;
            };
            let cand = RigidTransform::new(
                Rotation::from_matrix(&(r0 * dr)),
                t.translation + Vec3::new(step[6], step[7], step[8]),
            );
            let next = evaluate(samples, &fixed_d, &mov, &cand, lambda);
            if next.objective <= cur.objective {
                let gain = cur.objective - next.objective;
                t = cand;
                cur = next;
                history.push(cur.objective);
                mu = (mu * 0.3).max(1e-12);
                accepted = gain > 1e-12 * cur.objective.max(1e-300);
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if !cur.objective.is_finite() {
        return Err(Error::DivergedRefinement { rmse: cur.objective });
    }
    Ok(MeshFitResult {
        transform: t,
        objective: cur.objective,
        initial_objective,
        history,
    })
}
