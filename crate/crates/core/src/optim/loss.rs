//! Image and grid losses with their gradients. Images are row-major,
//! channel-interleaved `f64` buffers.

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::explin_with_grad;
use crate::real::Real;
use crate::scene::SparseScene;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Output pixels whose transmittance reaches this count as background for
/// the depth-normal losses.
pub const SURFACE_TRANSMITTANCE: f64 = 0.01;

fn check_dims(a: &[f64], b: &[f64], width: u32, height: u32, channels: usize) -> Result<()> {
    let n = (width * height) as usize * channels;
    if a.len() != n || b.len() != n {
        return Err(Error::invalid(format!(
            "image sizes {} and {} do not match {width}x{height}x{channels}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!("image sizes {} and {} differ", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Separable Gaussian blur whose window is truncated at the image border and
/// renormalized, so constant images stay constant.
struct Blur {
    kernel: Vec<f64>,
}

impl Blur {
    fn new() -> Self {
        let r = (SSIM_WINDOW / 2) as isize;
        let kernel = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
        Blur { kernel }
    }

    fn taps(&self, i: usize, n: usize) -> (usize, usize, f64) {
        let r = SSIM_WINDOW / 2;
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let norm: f64 = (lo..=hi).map(|j| self.kernel[j + r - i]).sum();
        (lo, hi, norm)
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.kernel[j + SSIM_WINDOW / 2 - i]
    }

    /// Single-channel blur; `transpose` applies the adjoint.
    fn apply(&self, src: &[f64], w: usize, h: usize, transpose: bool) -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        self.pass(src, &mut tmp, w, h, true, transpose);
        self.pass(&tmp, &mut out, w, h, false, transpose);
        out
    }

    fn pass(&self, src: &[f64], dst: &mut [f64], w: usize, h: usize, horizontal: bool, transpose: bool) {
        let (n, lines) = if horizontal { (w, h) } else { (h, w) };
        let at = |line: usize, i: usize| if horizontal { line * w + i } else { i * w + line };
        for line in 0..lines {
            for i in 0..n {
                let (lo, hi, norm) = self.taps(i, n);
                if transpose {
                    let v = src[at(line, i)] / norm;
                    for j in lo..=hi {
                        dst[at(line, j)] += self.weight(i, j) * v;
                    }
                } else {
                    let mut acc = 0.0;
                    for j in lo..=hi {
                        acc += self.weight(i, j) * src[at(line, j)];
                    }
                    dst[at(line, i)] = acc / norm;
                }
            }
        }
    }
}

fn channel(img: &[f64], c: usize, channels: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM over pixels and channels, with its gradient with respect to
/// `a` when `want_grad` is set.
pub fn ssim_with_grad(
    a: &[f64],
    b: &[f64],
    width: u32,
    height: u32,
    channels: usize,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_dims(a, b, width, height, channels)?;
    let (w, h) = (width as usize, height as usize);
    let n = w * h;
    if n == 0 {
        return Err(Error::invalid("empty image"));
    }
    let blur = Blur::new();
    let scale = 1.0 / (n * channels) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.len()]);
    for c in 0..channels {
        let x = channel(a, c, channels);
        let y = channel(b, c, channels);
        let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = blur.apply(&x, w, h, false);
        let my = blur.apply(&y, w, h, false);
        let exx = blur.apply(&sq(&x, &x), w, h, false);
        let eyy = blur.apply(&sq(&y, &y), w, h, false);
        let exy = blur.apply(&sq(&x, &y), w, h, false);
        let mut g_mu = vec![0.0; n];
        let mut g_xx = vec![0.0; n];
        let mut g_xy = vec![0.0; n];
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let vx = exx[p] - ux * ux;
            let vy = eyy[p] - uy * uy;
            let cxy = exy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dcxy = 2.0 * a1 / (b1 * b2);
                let ds_dvx = -s / b2;
                let ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                g_mu[p] = scale * (ds_dux - ds_dcxy * uy - ds_dvx * 2.0 * ux);
                g_xx[p] = scale * ds_dvx;
                g_xy[p] = scale * ds_dcxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur.apply(&g_mu, w, h, true);
            let t_xx = blur.apply(&g_xx, w, h, true);
            let t_xy = blur.apply(&g_xy, w, h, true);
            for p in 0..n {
                g[p * channels + c] = t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p];
            }
        }
    }
    Ok((total * scale, grad))
}

pub fn ssim(a: &[f64], b: &[f64], width: u32, height: u32, channels: usize) -> Result<f64> {
    ssim_with_grad(a, b, width, height, channels, false).map(|r| r.0)
}

/// `1 - SSIM` of RGB images and its gradient with respect to `pred`.
pub fn ssim_loss(pred: &[f64], target: &[f64], width: u32, height: u32) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_with_grad(pred, target, width, height, 3, true)?;
    let g = g.expect("gradient requested").into_iter().map(|v| -v).collect();
    Ok((1.0 - s, g))
}

/// Per voxel, the mean squared difference of activated corner densities over
/// the 12 cube edges times the voxel size; averaged over voxels. Returns the
/// loss and its gradient on the raw density pool.
pub fn tv_loss<R: Real>(scene: &SparseScene<R>) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scene.pool_len()];
    if scene.is_empty() {
        return (0.0, grad);
    }
    let act: Vec<(f64, f64)> = scene.density.iter().map(|d| explin_with_grad(d.to_f64())).collect();
    let scale = 1.0 / (12.0 * scene.len() as f64);
    let mut loss = 0.0;
    for v in 0..scene.len() {
        let (_, size) = scene.geometry(v);
        let idx = scene.corner_index[v];
        for a in 0..8usize {
            for bit in [4usize, 2, 1] {
                if a & bit != 0 {
                    continue;
                }
                let (pa, pb) = (idx[a] as usize, idx[a | bit] as usize);
                let d = act[pa].0 - act[pb].0;
                loss += size * d * d * scale;
                let g = 2.0 * size * d * scale;
                grad[pa] += g * act[pa].1;
                grad[pb] -= g * act[pb].1;
            }
        }
    }
    (loss, grad)
}

/// Result of [`depth_normal_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNormalLoss {
    pub loss: f64,
    /// Gradient with respect to the rendered normal map.
    pub normal: Vec<f64>,
    /// Gradient with respect to the depth map.
    pub depth: Vec<f64>,
    pub pixels: usize,
}

/// Camera-space point at pixel `(x, y)` and unit depth.
fn unit_point(cam: &Camera, x: usize, y: usize) -> Vector3<f64> {
    Vector3::new((x as f64 + 0.5 - cam.cx) / cam.fx, (y as f64 + 0.5 - cam.cy) / cam.fy, 1.0)
}

/// Mean of `1 - <n_render, n_depth>` over interior surface pixels, both
/// normals unit length, where `n_depth` comes from central differences of the
/// back-projected depth map. A pixel counts when it and its four neighbours
/// have transmittance below [`SURFACE_TRANSMITTANCE`] and both normals are
/// non-degenerate.
pub fn depth_normal_loss(
    cam: &Camera,
    depth: &[f64],
    normal: &[f64],
    transmittance: &[f64],
) -> Result<DepthNormalLoss> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let n = w * h;
    if depth.len() != n || transmittance.len() != n || normal.len() != 3 * n {
        return Err(Error::invalid("depth-normal loss buffers do not match the camera size"));
    }
    let mut out = DepthNormalLoss {
        loss: 0.0,
        normal: vec![0.0; 3 * n],
        depth: vec![0.0; n],
        pixels: 0,
    };
    if w < 3 || h < 3 {
        return Ok(out);
    }
    let point = |x: usize, y: usize| unit_point(cam, x, y) * depth[y * w + x];
    let rt = cam.rotation.transpose();
    // (pixel, per-pixel loss gradient pieces) collected first so the mean
    // can be applied once the count is known.
    let mut terms = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = y * w + x;
            let stencil = [p, p - 1, p + 1, p - w, p + w];
            if stencil.iter().any(|&q| !(transmittance[q] < SURFACE_TRANSMITTANCE)) {
                continue;
            }
            let nr = Vector3::new(normal[3 * p], normal[3 * p + 1], normal[3 * p + 2]);
            let dx = point(x + 1, y) - point(x - 1, y);
            let dy = point(x, y + 1) - point(x, y - 1);
            let nc = dx.cross(&dy);
            let (lr, lc) = (nr.norm(), nc.norm());
            if lr < 1e-12 || lc < 1e-12 {
                continue;
            }
            let u = nr / lr;
            let vc = nc / lc;
            let v = cam.rotation * vc;
            let cos = u.dot(&v);
            // d(-cos)/d(nr) and d(-cos)/d(nc)
            let g_nr = -(v - u * cos) / lr;
            let ru = rt * u;
            let g_nc = -(ru - vc * vc.dot(&ru)) / lc;
            terms.push((x, y, 1.0 - cos, g_nr, dy.cross(&g_nc), g_nc.cross(&dx)));
        }
    }
    if terms.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / terms.len() as f64;
    out.pixels = terms.len();
    for (x, y, l, g_nr, g_dx, g_dy) in terms {
        let p = y * w + x;
        out.loss += l * inv;
        for c in 0..3 {
            out.normal[3 * p + c] += g_nr[c] * inv;
        }
        let mut add = |qx: usize, qy: usize, g: Vector3<f64>| {
            out.depth[qy * w + qx] += g.dot(&unit_point(cam, qx, qy)) * inv;
        };
        add(x + 1, y, g_dx);
        add(x - 1, y, -g_dx);
        add(x, y + 1, g_dy);
        add(x, y - 1, -g_dy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut v = x.to_vec();
        let mut at = |d: f64| {
            v[i] = x[i] + d;
            f(&v)
        };
        (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse(&[0.5; 6], &[0.5; 6]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let a = [0.0, 1.0, 1.0, 0.0];
        let b = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(mse(&a, &b).unwrap().0, 1.0);
        assert!(mse(&a, &b[..3]).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 20 * 17 * 3);
        let (l, g) = ssim_loss(&a, &a, 20, 17).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (p, q) = (0.3, 0.7);
        let a = vec![p; 16 * 16];
        let b = vec![q; 16 * 16];
        let want = (2.0 * p * q + SSIM_C1) * SSIM_C2 / ((p * p + q * q + SSIM_C1) * SSIM_C2);
        let got = ssim(&a, &b, 16, 16, 1).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 13 * 9 * 3);
        let b = random_image(&mut rng, 13 * 9 * 3);
        let ab = ssim(&a, &b, 13, 9, 3).unwrap();
        let ba = ssim(&b, &a, 13, 9, 3).unwrap();
        assert!((ab - ba).abs() < 1e-14);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (14u32, 12u32);
        let a = random_image(&mut rng, (w * h * 3) as usize);
        let b = random_image(&mut rng, (w * h * 3) as usize);
        let (_, g) = ssim_loss(&a, &b, w, h).unwrap();
        for _ in 0..40 {
            let i = rng.gen_range(0..a.len());
            let num = fd(|x| ssim_loss(x, &b, w, h).unwrap().0, &a, i, 1e-4);
            assert!((num - g[i]).abs() <= 1e-7 * num.abs().max(1e-4), "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn blur_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (15, 7);
        let x = random_image(&mut rng, w * h);
        let y = random_image(&mut rng, w * h);
        let b = Blur::new();
        let lhs: f64 = b.apply(&x, w, h, false).iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(b.apply(&y, w, h, true)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn depth_normal_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = Camera::look_at(
            9,
            8,
            60.0,
            Vector3::new(0.3, -2.0, 0.5),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let n = 72;
        let depth: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..2.0)).collect();
        let normal: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut trans = vec![0.0; n];
        trans[20] = 0.5;
        let r = depth_normal_loss(&cam, &depth, &normal, &trans).unwrap();
        assert!(r.pixels > 0 && r.pixels < 7 * 6);
        for i in 0..n {
            let num = fd(|d| depth_normal_loss(&cam, d, &normal, &trans).unwrap().loss, &depth, i, 1e-5);
            assert!((num - r.depth[i]).abs() < 1e-7, "depth {i}: {num} vs {}", r.depth[i]);
        }
        for i in 0..3 * n {
            let num = fd(|v| depth_normal_loss(&cam, &depth, v, &trans).unwrap().loss, &normal, i, 1e-5);
            assert!((num - r.normal[i]).abs() < 1e-7, "normal {i}: {num} vs {}", r.normal[i]);
        }
    }

    #[test]
    fn depth_normal_zero_on_consistent_plane() {
        // plane z = 2 in camera space seen head on, normal along the view axis
        let cam = Camera::new(8, 8, 8.0, 8.0, 4.0, 4.0, nalgebra::Matrix3::identity(), Vector3::zeros()).unwrap();
        let depth = vec![2.0; 64];
        let normal: Vec<f64> = (0..64).flat_map(|_| [0.0, 0.0, 1.0]).collect();
        let r = depth_normal_loss(&cam, &depth, &normal, &[0.0; 64]).unwrap();
        assert_eq!(r.pixels, 36);
        assert!(r.loss.abs() < 1e-14);
    }
}
