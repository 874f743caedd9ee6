//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Constants and sign conventions follow the usual Gaussian splatting
//! layout, so coefficient files are interchangeable with common tooling.
//! The color is `max(0, 0.5 + Σ_k c_k Y_k(d))` per channel.

use nalgebra::{Matrix3, Vector3};

pub const MAX_DEGREE: u8 = 3;
pub const MAX_COEFFS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const fn num_coeffs(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

pub fn degree_from_coeffs(n: usize) -> Option<u8> {
    (0..=MAX_DEGREE).find(|&d| num_coeffs(d) == n)
}

pub fn rgb_to_dc(rgb: &Vector3<f64>) -> Vector3<f64> {
    rgb.map(|c| (c - 0.5) / C0)
}

pub fn dc_to_rgb(dc: &Vector3<f64>) -> Vector3<f64> {
    dc.map(|c| c * C0 + 0.5)
}

/// Basis values and their derivatives with respect to the (unit) direction.
pub fn basis_with_grad(dir: &Vector3<f64>, n: usize) -> ([f64; MAX_COEFFS], [Vector3<f64>; MAX_COEFFS]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; MAX_COEFFS];
    let mut g = [Vector3::zeros(); MAX_COEFFS];
    b[0] = C0;
    if n > 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
        g[1] = Vector3::new(0.0, -C1, 0.0);
        g[2] = Vector3::new(0.0, 0.0, C1);
        g[3] = Vector3::new(-C1, 0.0, 0.0);
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        g[4] = C2[0] * Vector3::new(y, x, 0.0);
        g[5] = C2[1] * Vector3::new(0.0, z, y);
        g[6] = C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = C2[3] * Vector3::new(z, 0.0, x);
        g[8] = C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    }
    if n > 9 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
        g[9] = C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        g[10] = C3[1] * Vector3::new(y * z, x * z, x * y);
        g[11] = C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        g[12] = C3[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
        g[13] = C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        g[14] = C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
        g[15] = C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
    (b, g)
}

/// Color seen along `view` (camera center to primitive, any length).
pub fn eval_color(coeffs: &[Vector3<f64>], view: &Vector3<f64>) -> Vector3<f64> {
    let raw = eval_raw(coeffs, view);
    raw.map(|c| c.max(0.0))
}

fn eval_raw(coeffs: &[Vector3<f64>], view: &Vector3<f64>) -> Vector3<f64> {
    if coeffs.len() == 1 {
        return coeffs[0] * C0 + Vector3::repeat(0.5);
    }
    let dir = view.normalize();
    let (b, _) = basis_with_grad(&dir, coeffs.len());
    coeffs
        .iter()
        .zip(b.iter())
        .fold(Vector3::repeat(0.5), |acc, (c, w)| acc + c * *w)
}

/// Backward of [`eval_color`]: writes `dL/dcoeffs` into `d_coeffs` and
/// returns `dL/dview`.
pub fn eval_color_backward(
    coeffs: &[Vector3<f64>],
    view: &Vector3<f64>,
    d_color: &Vector3<f64>,
    d_coeffs: &mut [Vector3<f64>],
) -> Vector3<f64> {
    let raw = eval_raw(coeffs, view);
    let d_raw = Vector3::from_fn(|i, _| if raw[i] > 0.0 { d_color[i] } else { 0.0 });
    if coeffs.len() == 1 {
        d_coeffs[0] += d_raw * C0;
        return Vector3::zeros();
    }
    let len = view.norm();
    let dir = view / len;
    let (b, g) = basis_with_grad(&dir, coeffs.len());
    let mut d_dir = Vector3::zeros();
    for k in 0..coeffs.len() {
        d_coeffs[k] += d_raw * b[k];
        d_dir += g[k] * coeffs[k].dot(&d_raw);
    }
    // d(v/|v|)/dv = (I - d dᵀ)/|v|
    (Matrix3::identity() - dir * dir.transpose()) * d_dir / len
}
