//! Rigid hand-object registration and reconstruction evaluation.
//!
//! The crate covers both stages of a video-based hand-object reconstruction
//! pipeline and the metrics used to benchmark them:
//!
//! * [`align`]: Umeyama/Procrustes, PnP, trimmed ICP and the normal-augmented
//!   two-mesh fitting objective.
//! * [`refine`]: photometric refinement of per-frame poses with temporal
//!   smoothness and weight-decay terms, optimized with Adam.
//! * [`handcam`]: rigid transforms from per-frame hand keypoints.
//! * [`segment`]: depth and sleeve-color foreground masks.
//! * [`vh`]: robust visual-hull carving and isosurface extraction.
//! * [`eval`]: reconstruction and pose metrics, grouped reports.
//! * [`synth`]: synthetic scenes used as ground truth by the tests.
//! * [`io`]: PLY, PPM/PGM, pose, keypoint, manifest and report files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod error;
pub mod eval;
pub mod geom;
pub mod handcam;
pub mod io;
pub mod refine;
pub mod segment;
pub mod spatial;
pub mod synth;
pub mod vh;

pub use error::{Error, Result};
