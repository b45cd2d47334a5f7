//! Foreground masks from a depth window and a sleeve-color rejection.

use crate::error::{Error, Result};
use crate::geom::{Mask, OrganizedCloud, RgbImage, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentConfig {
    /// Camera depth window in meters, inclusive.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Pixels within `tol` (Euclidean RGB distance) of this color are removed.
    pub sleeve_color: Option<Vec3>,
    pub tol: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            depth_min: 0.0,
            depth_max: f64::INFINITY,
            sleeve_color: None,
            tol: 0.15,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_min >= 0.0 && self.depth_max > self.depth_min && self.tol >= 0.0) {
            return Err(Error::InvalidInput("invalid segmentation thresholds".into()));
        }
        Ok(())
    }
}

/// Pixels with a depth return inside `[depth_min, depth_max]`.
pub fn depth_mask(cloud: &OrganizedCloud, depth_min: f64, depth_max: f64) -> Mask {
    Mask {
        width: cloud.width,
        height: cloud.height,
        bits: (0..cloud.positions.len())
            .map(|i| cloud.has_return(i) && (depth_min..=depth_max).contains(&cloud.positions[i].z))
            .collect(),
    }
}

/// Pixels whose color lies within `tol` of `color`.
pub fn color_mask(image: &RgbImage, color: &Vec3, tol: f64) -> Mask {
    Mask {
        width: image.width,
        height: image.height,
        bits: image.pixels.iter().map(|p| (p - color).norm() <= tol).collect(),
    }
}

/// `depth ∧ ¬sleeve`.
pub fn segment(cloud: &OrganizedCloud, image: &RgbImage, cfg: &SegmentConfig) -> Result<Mask> {
    cfg.validate()?;
    if (cloud.width, cloud.height) != (image.width, image.height) {
        return Err(Error::InvalidInput(format!(
            "cloud {}x{} and image {}x{} disagree",
            cloud.width, cloud.height, image.width, image.height
        )));
    }
    let mut mask = depth_mask(cloud, cfg.depth_min, cfg.depth_max);
    if let Some(c) = &cfg.sleeve_color {
        let sleeve = color_mask(image, c, cfg.tol);
        for (m, s) in mask.bits.iter_mut().zip(&sleeve.bits) {
            *m &= !s;
        }
    }
    Ok(mask)
}
