//! Continuous 6D rotation parametrization.
//!
//! A rotation correction is stored as two 3-vectors, the rows of a 2×3
//! matrix. Gram-Schmidt turns them into an orthonormal basis `e1, e2` and
//! `e3 = e1 × e2`; the rotation matrix has these as its rows.

use super::{Mat3, Rotation, Vec3};
use crate::error::{Error, Result};

/// Rows shorter than this are rejected as degenerate.
const MIN_ROW_NORM: f64 = 1e-9;
/// Minimum angle between the two rows, in radians.
const MIN_ROW_ANGLE: f64 = 1e-6;

/// A pose correction: 6D rotation rows plus a translation offset in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SixDofParam {
    pub rot6: [Vec3; 2],
    pub trans: Vec3,
}

impl Default for SixDofParam {
    fn default() -> Self {
        Self::identity()
    }
}

impl SixDofParam {
    /// Rows `(1,0,0)` and `(0,1,0)`, zero translation.
    pub fn identity() -> Self {
        Self {
            rot6: [Vec3::x(), Vec3::y()],
            trans: Vec3::zeros(),
        }
    }

    /// First two rows of `r`'s matrix.
    pub fn from_rotation(r: &Rotation, trans: Vec3) -> Self {
        let m = r.matrix();
        Self {
            rot6: [m.row(0).transpose(), m.row(1).transpose()],
            trans,
        }
    }

    pub fn orth(&self) -> Result<Rotation> {
        orth_matrix(&self.rot6).map(|m| Rotation::from_matrix(&m))
    }

    /// The 9 parameters flattened as `[r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, t.x, t.y, t.z]`.
    pub fn to_array(&self) -> [f64; 9] {
        let [a, b] = &self.rot6;
        [a.x, a.y, a.z, b.x, b.y, b.z, self.trans.x, self.trans.y, self.trans.z]
    }

    pub fn from_array(v: &[f64; 9]) -> Self {
        Self {
            rot6: [Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])],
            trans: Vec3::new(v[6], v[7], v[8]),
        }
    }
}

fn check_rows(rows: &[Vec3; 2]) -> Result<(f64, f64)> {
    let (n1, n2) = (rows[0].norm(), rows[1].norm());
    if !(n1 >= MIN_ROW_NORM && n2 >= MIN_ROW_NORM) {
        return Err(Error::DegenerateParam("row norm below 1e-9"));
    }
    let sin = rows[0].cross(&rows[1]).norm() / (n1 * n2);
    if !(sin > MIN_ROW_ANGLE.sin()) {
        return Err(Error::DegenerateParam("rows are parallel"));
    }
    Ok((n1, n2))
}

/// Gram-Schmidt orthonormalization of the two rows into a proper rotation matrix.
pub fn orth_matrix(rows: &[Vec3; 2]) -> Result<Mat3> {
    let (n1, _) = check_rows(rows)?;
    let e1 = rows[0] / n1;
    let u = rows[1] - e1 * rows[1].dot(&e1);
    let e2 = u / u.norm();
    let e3 = e1.cross(&e2);
    Ok(Mat3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]))
}

/// `orth_matrix` together with its derivative with respect to each of the six
/// row components (row 0 x,y,z then row 1 x,y,z).
pub fn orth_jacobian(rows: &[Vec3; 2]) -> Result<(Mat3, [Mat3; 6])> {
    let (n1, _) = check_rows(rows)?;
    let v2 = rows[1];
    let e1 = rows[0] / n1;
    let a = v2.dot(&e1);
    let u = v2 - e1 * a;
    let nu = u.norm();
    let e2 = u / nu;
    let e3 = e1.cross(&e2);
    let m = Mat3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);

    let p1 = (Mat3::identity() - e1 * e1.transpose()) / n1;
    let p2 = (Mat3::identity() - e2 * e2.transpose()) / nu;
    let mut jac = [Mat3::zeros(); 6];
    for (k, d) in jac.iter_mut().enumerate() {
        let (dv1, dv2) = if k < 3 {
            (Vec3::ith(k, 1.0), Vec3::zeros())
        } else {
            (Vec3::zeros(), Vec3::ith(k - 3, 1.0))
        };
        let de1 = p1 * dv1;
        let du = dv2 - e1 * dv2.dot(&e1) - e1 * v2.dot(&de1) - de1 * a;
        let de2 = p2 * du;
        let de3 = de1.cross(&e2) + e1.cross(&de2);
        *d = Mat3::from_rows(&[de1.transpose(), de2.transpose(), de3.transpose()]);
    }
    Ok((m, jac))
}
