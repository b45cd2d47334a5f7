//! Closed-form and iterative alignment.

mod icp;
mod meshfit;
mod pnp;
mod umeyama;

pub use icp::{icp, icp_with_target, sequential_icp, IcpConfig, IcpMode, IcpResult, IcpTarget};
pub use meshfit::{
    fit_mesh_pose, indexed_distance, point_mesh_distance, sample_with_normals, two_mesh_objective,
    two_mesh_objective_indexed, MeshFitConfig, MeshFitResult, PointMeshDistance, SurfaceSample,
};
pub use pnp::{pnp, pnp_with_config, reprojection_rmse, PnpConfig, PnpResult, MIN_PNP_POINTS};
pub use umeyama::{alignment_mse, umeyama};
