//! Real spherical-harmonic basis up to degree 3 and view-dependent color.
//!
//! Coefficients are stored coefficient-major: `sh[k * 3 + c]` is basis
//! function `k` for color channel `c`. Basis ordering and signs follow the
//! usual Gaussian splatting convention.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a degree.
pub const fn num_basis(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Number of stored scalars (three channels) for a degree.
pub const fn num_coeffs(degree: usize) -> usize {
    3 * num_basis(degree)
}

/// Degree whose coefficient count is `len`, if any.
pub fn degree_for_len(len: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| num_coeffs(d) == len)
}

/// Basis values `Y_k(dir)` for `k < num_basis(degree)`, written to `out`.
pub fn basis(degree: usize, dir: &Vector3<f64>, out: &mut [f64; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = SH_C0;
    if degree < 1 {
        return;
    }
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = SH_C2[0] * x * y;
    out[5] = SH_C2[1] * y * z;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * x * z;
    out[8] = SH_C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * x * y * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis function with respect to the
/// (unnormalized) Cartesian components of the direction.
pub fn basis_gradient(degree: usize, dir: &Vector3<f64>, out: &mut [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -SH_C1, 0.0];
    out[2] = [0.0, 0.0, SH_C1];
    out[3] = [-SH_C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let scaled = |c: f64, v: [f64; 3]| [c * v[0], c * v[1], c * v[2]];
    out[4] = scaled(SH_C2[0], [y, x, 0.0]);
    out[5] = scaled(SH_C2[1], [0.0, z, y]);
    out[6] = scaled(SH_C2[2], [-2.0 * x, -2.0 * y, 4.0 * z]);
    out[7] = scaled(SH_C2[3], [z, 0.0, x]);
    out[8] = scaled(SH_C2[4], [2.0 * x, -2.0 * y, 0.0]);
    if degree < 3 {
        return;
    }
    out[9] = scaled(SH_C3[0], [6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0]);
    out[10] = scaled(SH_C3[1], [y * z, x * z, x * y]);
    out[11] = scaled(SH_C3[2], [-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z]);
    out[12] = scaled(
        SH_C3[3],
        [-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy],
    );
    out[13] = scaled(SH_C3[4], [4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z]);
    out[14] = scaled(SH_C3[5], [2.0 * x * z, -2.0 * y * z, xx - yy]);
    out[15] = scaled(SH_C3[6], [3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0]);
}

/// Color of an SH expansion seen along `view_dir`, clamped to [0, 1] per
/// channel after the 0.5 offset.
pub fn eval_sh(sh: &[f64], degree: usize, view_dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let nb = num_basis(degree);
    if degree > MAX_SH_DEGREE || sh.len() < 3 * nb {
        return Err(Error::invalid(format!(
            "SH degree {degree} needs {} coefficients, have {}",
            3 * nb,
            sh.len()
        )));
    }
    Ok(eval_unclamped(sh, degree, view_dir).map(|v| v.clamp(0.0, 1.0)))
}

pub(crate) fn eval_unclamped(sh: &[f64], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let mut y = [0.0; 16];
    basis(degree, dir, &mut y);
    let mut rgb = [0.5; 3];
    for (k, yk) in y.iter().enumerate().take(num_basis(degree)) {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += sh[k * 3 + c] * yk;
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: [f64; 3]) -> Vector3<f64> {
        Vector3::from(v).normalize()
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let sh = vec![0.0; num_coeffs(1)];
        let c = eval_sh(&sh, 1, &unit([0.3, -0.2, 0.9])).unwrap();
        assert_eq!(c, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn dc_term_reaches_white() {
        let f = 0.5 / 0.28209479177;
        let sh = vec![f; 3];
        let c = eval_sh(&sh, 0, &unit([0.0, 0.0, 1.0])).unwrap();
        for v in c {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn degree_zero_is_isotropic() {
        let sh = vec![0.4, -0.2, 0.1];
        let a = eval_sh(&sh, 0, &unit([1.0, 0.0, 0.0])).unwrap();
        let b = eval_sh(&sh, 0, &unit([-0.3, 0.7, 0.2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degree_beyond_storage_rejected() {
        let sh = vec![0.0; num_coeffs(1)];
        assert!(eval_sh(&sh, 2, &unit([0.0, 0.0, 1.0])).is_err());
        assert!(eval_sh(&sh, 4, &unit([0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn linear_before_clamping() {
        let sh: Vec<f64> = (0..num_coeffs(3)).map(|i| 0.01 * ((i as f64) * 0.7).sin()).collect();
        let d = unit([0.2, 0.5, -0.8]);
        let a = 1.7;
        let scaled: Vec<f64> = sh.iter().map(|v| a * v).collect();
        let base = eval_sh(&sh, 3, &d).unwrap();
        let sc = eval_sh(&scaled, 3, &d).unwrap();
        for c in 0..3 {
            assert!(((sc[c] - 0.5) - a * (base[c] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_gradient_matches_central_differences() {
        let d = Vector3::new(0.3, -0.5, 0.7);
        let mut g = [[0.0; 3]; 16];
        basis_gradient(3, &d, &mut g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let (mut bp, mut bm) = ([0.0; 16], [0.0; 16]);
            basis(3, &p, &mut bp);
            basis(3, &m, &mut bm);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }
}
