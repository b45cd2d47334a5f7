//! File formats and the sequence directory layout.

mod layout;
mod ply;
mod pnm;
mod poses;
mod report;

pub use layout::*;
pub use ply::{
    cloud_from_ply, mesh_from_ply, organized_from_ply, read_ply, write_cloud_ply, write_mesh_ply, write_organized_ply,
    PlyData, PlyElement, PlyEncoding,
};
pub use pnm::{read_pgm_mask, read_ppm, write_pgm_mask, write_ppm};
pub use poses::{
    frame_index_of, import_sfm_images, read_keypoints, read_poses, write_keypoints, write_poses, POSE_CONVENTION,
    QUATERNION_TOLERANCE,
};
pub use report::{read_records, write_grouped, write_records, write_trace, REPORT_HEADER, TRACE_HEADER};
