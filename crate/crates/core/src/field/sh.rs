//! Real spherical harmonics up to degree 3.
//!
//! Coefficients for one voxel are laid out coefficient-major, channel-minor:
//! `coeffs[m * 3 + ch]`.

use nalgebra::Vector3;

use crate::real::Real;

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

pub const MAX_SH_DEGREE: usize = 3;
pub const MAX_SH_COEFFS: usize = 16;

pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at a unit direction; entries past the degree are zero.
pub fn sh_basis<R: Real>(degree: usize, dir: &Vector3<R>) -> [R; MAX_SH_COEFFS] {
    let mut b = [R::zero(); MAX_SH_COEFFS];
    b[0] = R::of(SH_C0);
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c1 = R::of(SH_C1);
    b[1] = -c1 * y;
    b[2] = c1 * z;
    b[3] = -c1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let c2 = SH_C2.map(R::of);
    b[4] = c2[0] * xy;
    b[5] = c2[1] * yz;
    b[6] = c2[2] * (R::of(2.0) * zz - xx - yy);
    b[7] = c2[3] * xz;
    b[8] = c2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    let c3 = SH_C3.map(R::of);
    let (three, four) = (R::of(3.0), R::of(4.0));
    b[9] = c3[0] * y * (three * xx - yy);
    b[10] = c3[1] * xy * z;
    b[11] = c3[2] * y * (four * zz - xx - yy);
    b[12] = c3[3] * z * (R::of(2.0) * zz - three * xx - three * yy);
    b[13] = c3[4] * x * (four * zz - xx - yy);
    b[14] = c3[5] * z * (xx - yy);
    b[15] = c3[6] * x * (xx - three * yy);
    b
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShColor<R: Real> {
    /// Clamped color.
    pub rgb: [R; 3],
    /// Unclamped sum per channel; the clamp gate for the backward pass.
    pub raw: [R; 3],
}

pub fn sh_eval<R: Real>(coeffs: &[R], basis: &[R; MAX_SH_COEFFS], degree: usize) -> ShColor<R> {
    let n = sh_coeff_count(degree);
    debug_assert!(coeffs.len() >= n * 3);
    let mut raw = [R::zero(); 3];
    for m in 0..n {
        for ch in 0..3 {
            raw[ch] += basis[m] * coeffs[m * 3 + ch];
        }
    }
    ShColor {
        rgb: raw.map(|v| if v > R::zero() { v } else { R::zero() }),
        raw,
    }
}

/// Accumulates `dL/dcoeffs` into `grad` given `dL/drgb`.
pub fn sh_backward<R: Real>(
    color: &ShColor<R>,
    basis: &[R; MAX_SH_COEFFS],
    degree: usize,
    dl_drgb: &[R; 3],
    grad: &mut [R],
) {
    let gate = std::array::from_fn::<R, 3, _>(|ch| if color.raw[ch] > R::zero() { dl_drgb[ch] } else { R::zero() });
    for m in 0..sh_coeff_count(degree) {
        for ch in 0..3 {
            grad[m * 3 + ch] += basis[m] * gate[ch];
        }
    }
}

/// Degree-0 coefficient that renders as `intensity` in every direction.
pub fn sh_dc_for(intensity: f64) -> f64 {
    intensity / SH_C0
}
