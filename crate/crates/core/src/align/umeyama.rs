use crate::error::{Error, Result};
use crate::geom::{Mat3, Rotation, SimilarityTransform, Vec3};

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// mapping `src[i]` onto `dst[i]`. Reflections are excluded.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;

    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        cov += (d - mu_d) * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    if !(var_s > 0.0) || !(sv[1].1 > 1e-12 * sv[0].1.max(1e-300)) {
        return Err(Error::DegenerateConfiguration("covariance rank below 2"));
    }

    let mut s = Mat3::identity();
    let reflect = u.determinant() * v_t.determinant() < 0.0;
    if reflect {
        // flip the direction of the smallest singular value
        s[(sv[2].0, sv[2].0)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        (0..3).map(|k| svd.singular_values[k] * s[(k, k)]).sum::<f64>() / var_s
    } else {
        1.0
    };
    let rotation = Rotation::from_matrix(&r);
    let translation = mu_d - rotation.rotate(&mu_s) * scale;
    SimilarityTransform::new(scale, rotation, translation)
}

/// Mean squared residual `Σ‖dst − T(src)‖² / n`.
pub fn alignment_mse(t: &SimilarityTransform, src: &[Vec3], dst: &[Vec3]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - t.apply(s)).norm_squared())
        .sum();
    sum / src.len().max(1) as f64
}
