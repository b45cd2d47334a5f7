use super::{ColoredPointCloud, Vec3};
use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: Vec3) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Vec3>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Vec3 {
        self.pixels[row * self.width + col]
    }

    /// Bilinear sample at continuous `(u, v)` (pixel centers at integers),
    /// with its derivatives `(∂/∂u, ∂/∂v)`. `None` outside the pixel-center hull.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<(Vec3, Vec3, Vec3)> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        if c0 + 1 >= self.width || r0 + 1 >= self.height {
            return None;
        }
        let (a, b) = (u - c0 as f64, v - r0 as f64);
        let p00 = self.get(c0, r0);
        let p10 = self.get(c0 + 1, r0);
        let p01 = self.get(c0, r0 + 1);
        let p11 = self.get(c0 + 1, r0 + 1);
        let top = p00 * (1.0 - a) + p10 * a;
        let bottom = p01 * (1.0 - a) + p11 * a;
        let value = top * (1.0 - b) + bottom * b;
        let du = (p10 - p00) * (1.0 - b) + (p11 - p01) * b;
        let dv = bottom - top;
        Some((value, du, dv))
    }
}

/// Binary image mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel indices (row-major) that are set.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Removes pixels within `radius` (Chebyshev distance) of an unset pixel or the border.
    pub fn eroded(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let mut out = Mask::new(self.width, self.height);
        let r = radius as isize;
        for row in 0..self.height as isize {
            for col in 0..self.width as isize {
                if !self.get(col as usize, row as usize) {
                    continue;
                }
                let mut keep = true;
                'n: for dr in -r..=r {
                    for dc in -r..=r {
                        let (c, rr) = (col + dc, row + dr);
                        if c < 0
                            || rr < 0
                            || c >= self.width as isize
                            || rr >= self.height as isize
                            || !self.get(c as usize, rr as usize)
                        {
                            keep = false;
                            break 'n;
                        }
                    }
                }
                out.bits[row as usize * self.width + col as usize] = keep;
            }
        }
        out
    }
}

/// One back-projected point per pixel, camera frame. Pixels without a depth
/// return hold the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OrganizedCloud {
    pub width: usize,
    pub height: usize,
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

impl OrganizedCloud {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            positions: vec![Vec3::zeros(); n],
            normals: vec![Vec3::zeros(); n],
            colors: vec![Vec3::zeros(); n],
        }
    }

    #[inline]
    pub fn has_return(&self, i: usize) -> bool {
        self.positions[i].z > 0.0
    }

    /// Points with a depth return under the mask.
    pub fn masked(&self, mask: &Mask) -> ColoredPointCloud {
        let keep: Vec<bool> = (0..self.positions.len())
            .map(|i| mask.bits[i] && self.has_return(i))
            .collect();
        let normals_ok = self
            .normals
            .iter()
            .zip(&keep)
            .all(|(n, &k)| !k || (n.norm() - 1.0).abs() <= 1e-6);
        ColoredPointCloud {
            positions: self.positions.clone(),
            normals: normals_ok.then(|| self.normals.clone()),
            colors: Some(self.colors.clone()),
        }
        .select(&keep)
    }
}
