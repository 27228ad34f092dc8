//! Per-voxel math: density activation, trilinear interpolation, ray-voxel
//! intersection, voxel alpha, normal and depth, each with its analytic
//! backward pass.

pub mod sh;

use nalgebra::Vector3;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::real::Real;

pub use sh::{sh_backward, sh_basis, sh_coeff_count, sh_dc_for, sh_eval, ShColor, MAX_SH_COEFFS, MAX_SH_DEGREE, SH_C0};

/// Upper bound on samples per voxel (the renderers accept `1..=MAX_SAMPLES`).
pub const MAX_SAMPLES: usize = 8;

const EXPLIN_KNEE: f64 = 1.1;

/// Exponential-linear activation: `x` above 1.1, `exp(x/1.1 - 1 + ln 1.1)`
/// otherwise. C1 at the knee, strictly positive, monotone.
#[inline]
pub fn explin<R: Real>(x: R) -> R {
    let knee = R::of(EXPLIN_KNEE);
    if x > knee {
        x
    } else {
        (x / knee - R::one() + knee.ln()).exp()
    }
}

/// Inverse of [`explin`] for `y > 0`.
pub fn explin_inverse(y: f64) -> f64 {
    if y > EXPLIN_KNEE {
        y
    } else {
        EXPLIN_KNEE * (y.ln() - EXPLIN_KNEE.ln() + 1.0)
    }
}

/// `(explin(x), explin'(x))`.
#[inline]
pub fn explin_with_grad<R: Real>(x: R) -> (R, R) {
    let knee = R::of(EXPLIN_KNEE);
    if x > knee {
        (x, R::one())
    } else {
        let y = (x / knee - R::one() + knee.ln()).exp();
        (y, y / knee)
    }
}

/// Raw densities on the 8 corners, indexed by `4*i + 2*j + k`.
pub type CornerDensities<R> = [R; 8];

#[inline]
pub fn trilinear_weights<R: Real>(q: &Vector3<R>) -> [R; 8] {
    let one = R::one();
    let wx = [one - q.x, q.x];
    let wy = [one - q.y, q.y];
    let wz = [one - q.z, q.z];
    std::array::from_fn(|c| wx[c >> 2] * wy[(c >> 1) & 1] * wz[c & 1])
}

#[inline]
pub fn trilinear<R: Real>(v: &CornerDensities<R>, q: &Vector3<R>) -> R {
    let w = trilinear_weights(q);
    let mut acc = R::zero();
    for c in 0..8 {
        acc += w[c] * v[c];
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment<R: Real> {
    /// Entry distance in ray-parameter units.
    pub a: R,
    /// Exit distance.
    pub b: R,
    pub valid: bool,
}

/// Slab test. Zero direction components go through IEEE infinities. Rays
/// starting inside the voxel (`a <= 0`) count as misses.
#[inline]
pub fn ray_aabb<R: Real>(center: &Vector3<R>, size: R, ray: &Ray<R>) -> RaySegment<R> {
    let half = size * R::of(0.5);
    let mut a = R::min_value().unwrap_or(-R::one() / R::zero());
    let mut b = R::max_value().unwrap_or(R::one() / R::zero());
    for ax in 0..3 {
        let inv = R::one() / ray.dir[ax];
        let c0 = (center[ax] - half - ray.origin[ax]) * inv;
        let c1 = (center[ax] + half - ray.origin[ax]) * inv;
        let (lo, hi) = if c0 < c1 { (c0, c1) } else { (c1, c0) };
        if lo > a {
            a = lo;
        }
        if hi < b {
            b = hi;
        }
    }
    RaySegment {
        a,
        b,
        valid: a <= b && a > R::zero(),
    }
}

/// Intermediate values of one ray-voxel alpha evaluation.
#[derive(Clone, Copy, Debug)]
pub struct AlphaCache<R: Real> {
    pub samples: usize,
    /// Local voxel coordinates of the samples.
    pub q: [Vector3<R>; MAX_SAMPLES],
    /// Ray parameter of the samples.
    pub t: [R; MAX_SAMPLES],
    /// Raw (pre-activation) interpolated densities.
    pub raw: [R; MAX_SAMPLES],
    /// `explin'(raw)`.
    pub dact: [R; MAX_SAMPLES],
    /// Alpha of each sub-segment alone.
    pub sample_alpha: [R; MAX_SAMPLES],
    /// Segment length in world units.
    pub length: R,
    pub alpha: R,
}

/// Alpha of a voxel along a ray segment with `samples` midpoint samples.
///
/// `alpha = 1 - exp(-(l/K) * sum_k explin(interp(V, q_k)))` with
/// `t_k = a + (k - 0.5)/K * (b - a)` and `l = (b - a) * |d|`.
pub fn voxel_alpha<R: Real>(
    densities: &CornerDensities<R>,
    center: &Vector3<R>,
    size: R,
    segment: &RaySegment<R>,
    ray: &Ray<R>,
    samples: usize,
) -> AlphaCache<R> {
    debug_assert!((1..=MAX_SAMPLES).contains(&samples));
    let k_inv = R::one() / R::of(samples as f64);
    let span = segment.b - segment.a;
    let length = span * ray.dir.norm();
    let inv_size = R::one() / size;
    let lo = center.add_scalar(-size * R::of(0.5));
    let mut cache = AlphaCache {
        samples,
        q: [Vector3::zeros(); MAX_SAMPLES],
        t: [R::zero(); MAX_SAMPLES],
        raw: [R::zero(); MAX_SAMPLES],
        dact: [R::zero(); MAX_SAMPLES],
        sample_alpha: [R::zero(); MAX_SAMPLES],
        length,
        alpha: R::zero(),
    };
    let step = length * k_inv;
    let mut optical = R::zero();
    for k in 0..samples {
        let t = segment.a + (R::of(k as f64) + R::of(0.5)) * k_inv * span;
        let p = ray.at(t);
        let q = ((p - lo) * inv_size).map(|x| x.clamp(R::zero(), R::one()));
        let raw = trilinear(densities, &q);
        let (act, dact) = explin_with_grad(raw);
        cache.q[k] = q;
        cache.t[k] = t;
        cache.raw[k] = raw;
        cache.dact[k] = dact;
        cache.sample_alpha[k] = R::one() - (-step * act).exp();
        optical += act;
    }
    cache.alpha = R::one() - (-step * optical).exp();
    cache
}

/// Alpha only, for any sample count (no cache, no cap on `samples`).
pub fn voxel_alpha_value<R: Real>(
    densities: &CornerDensities<R>,
    center: &Vector3<R>,
    size: R,
    segment: &RaySegment<R>,
    ray: &Ray<R>,
    samples: usize,
) -> R {
    let k_inv = R::one() / R::of(samples as f64);
    let span = segment.b - segment.a;
    let lo = center.add_scalar(-size * R::of(0.5));
    let mut optical = R::zero();
    for k in 0..samples {
        let t = segment.a + (R::of(k as f64) + R::of(0.5)) * k_inv * span;
        let q = ((ray.at(t) - lo) / size).map(|x| x.clamp(R::zero(), R::one()));
        optical += explin(trilinear(densities, &q));
    }
    R::one() - (-span * ray.dir.norm() * k_inv * optical).exp()
}

/// `dL/dV = dL/dalpha * (1 - alpha) * (l/K) * sum_k explin'(v_k) * w(q_k)`.
pub fn voxel_alpha_backward<R: Real>(cache: &AlphaCache<R>, dl_dalpha: R) -> CornerDensities<R> {
    let scale = dl_dalpha * (R::one() - cache.alpha) * cache.length / R::of(cache.samples as f64);
    let mut grad = [R::zero(); 8];
    for k in 0..cache.samples {
        let w = trilinear_weights(&cache.q[k]);
        let s = scale * cache.dact[k];
        for c in 0..8 {
            grad[c] += s * w[c];
        }
    }
    grad
}

/// Corner gradients given gradients on the per-sample alphas.
pub fn sample_alpha_backward<R: Real>(cache: &AlphaCache<R>, dl_dsample: &[R]) -> CornerDensities<R> {
    let step = cache.length / R::of(cache.samples as f64);
    let mut grad = [R::zero(); 8];
    for k in 0..cache.samples {
        let s = dl_dsample[k] * (R::one() - cache.sample_alpha[k]) * step * cache.dact[k];
        if s == R::zero() {
            continue;
        }
        let w = trilinear_weights(&cache.q[k]);
        for c in 0..8 {
            grad[c] += s * w[c];
        }
    }
    grad
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelNormal<R: Real> {
    pub normal: Vector3<R>,
    /// Unnormalized density gradient at the voxel center.
    pub gradient: Vector3<R>,
    /// Gradient too small to normalize; `normal` is zero.
    pub degenerate: bool,
}

/// Analytic density gradient at the voxel center (local coordinates):
/// a quarter of the summed corner differences along each axis.
pub fn density_gradient<R: Real>(v: &CornerDensities<R>) -> Vector3<R> {
    let mut g = Vector3::zeros();
    for c in 0..8 {
        let s = |bit: usize| if (c >> bit) & 1 == 1 { v[c] } else { -v[c] };
        g.x += s(2);
        g.y += s(1);
        g.z += s(0);
    }
    g * R::of(0.25)
}

pub fn voxel_normal<R: Real>(v: &CornerDensities<R>) -> VoxelNormal<R> {
    let gradient = density_gradient(v);
    let n2 = gradient.norm_squared();
    if !(n2 > R::of(1e-24)) {
        return VoxelNormal {
            normal: Vector3::zeros(),
            gradient,
            degenerate: true,
        };
    }
    VoxelNormal {
        normal: gradient / n2.sqrt(),
        gradient,
        degenerate: false,
    }
}

/// Backward of [`voxel_normal`]: normalize Jacobian, then
/// `d grad / d V_ijk = 0.25 * (2i-1, 2j-1, 2k-1)`.
pub fn voxel_normal_backward<R: Real>(n: &VoxelNormal<R>, dl_dn: &Vector3<R>) -> CornerDensities<R> {
    if n.degenerate {
        return [R::zero(); 8];
    }
    let inv_len = R::one() / n.gradient.norm();
    let dl_dg = (dl_dn - n.normal * n.normal.dot(dl_dn)) * inv_len;
    density_gradient_backward(&dl_dg)
}

pub fn density_gradient_backward<R: Real>(dl_dg: &Vector3<R>) -> CornerDensities<R> {
    let q = R::of(0.25);
    std::array::from_fn(|c| {
        let s = |bit: usize| if (c >> bit) & 1 == 1 { q } else { -q };
        s(2) * dl_dg.x + s(1) * dl_dg.y + s(0) * dl_dg.z
    })
}

/// Depth of a voxel from its per-sample alphas:
/// `d = sum_k prod_{j<k}(1 - a_j) * a_k * t_k`.
pub fn voxel_depth<R: Real>(alpha: &[R], t: &[R]) -> R {
    let mut trans = R::one();
    let mut d = R::zero();
    for (a, t) in alpha.iter().zip(t) {
        d += trans * *a * *t;
        trans *= R::one() - *a;
    }
    d
}

/// Closed-form partials `dd/da_k` for up to three samples.
pub fn voxel_depth_backward<R: Real>(alpha: &[R], t: &[R]) -> Result<[R; 3]> {
    let z = R::zero();
    match (alpha, t) {
        ([_], [t1]) => Ok([*t1, z, z]),
        ([a1, a2], [t1, t2]) => Ok([*t1 - *a2 * *t2, *t2 - *a1 * *t2, z]),
        ([a1, a2, a3], [t1, t2, t3]) => Ok([
            *t1 + *a2 * *a3 * *t3 - *a2 * *t2 - *a3 * *t3,
            *t2 + *a1 * *a3 * *t3 - *a1 * *t2 - *a3 * *t3,
            *t3 + *a1 * *a2 * *t3 - *a1 * *t3 - *a2 * *t3,
        ]),
        _ => Err(Error::invalid(format!(
            "closed-form depth backward supports 1 to 3 samples, got {}",
            alpha.len()
        ))),
    }
}
