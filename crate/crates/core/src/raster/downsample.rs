//! Exact area averaging between a fine and a coarse grid, and its adjoint.

/// 1D box filter: output cell `x` averages the source interval
/// `[x * s, (x + 1) * s)` with `s = src / dst`, weighting partially covered
/// source cells by their overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaFilter {
    pub src: usize,
    pub dst: usize,
    /// Per output cell, `(source index, weight)`; weights sum to one.
    taps: Vec<Vec<(usize, f64)>>,
}

impl AreaFilter {
    pub fn new(src: usize, dst: usize) -> Self {
        assert!(dst > 0 && src >= dst);
        let s = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|x| {
                let (lo, hi) = (x as f64 * s, (x + 1) as f64 * s);
                let mut t = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / s;
                    if overlap > 1e-12 {
                        t.push((i, overlap));
                    }
                    i += 1;
                }
                t
            })
            .collect();
        AreaFilter { src, dst, taps }
    }

    pub fn taps(&self, x: usize) -> &[(usize, f64)] {
        &self.taps[x]
    }

    pub fn is_identity(&self) -> bool {
        self.src == self.dst
    }
}

/// Separable 2D area averaging for interleaved multi-channel images.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler {
    pub x: AreaFilter,
    pub y: AreaFilter,
}

impl Resampler {
    pub fn new(src_w: u32, src_h: u32, dst_w: u32, dst_h: u32) -> Self {
        Resampler {
            x: AreaFilter::new(src_w as usize, dst_w as usize),
            y: AreaFilter::new(src_h as usize, dst_h as usize),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.x.is_identity() && self.y.is_identity()
    }

    pub fn down(&self, src: &[f64], channels: usize) -> Vec<f64> {
        if self.is_identity() {
            return src.to_vec();
        }
        let (sw, dw, dh) = (self.x.src, self.x.dst, self.y.dst);
        let mut out = vec![0.0; dw * dh * channels];
        for oy in 0..dh {
            for &(sy, wy) in self.y.taps(oy) {
                for ox in 0..dw {
                    let o = (oy * dw + ox) * channels;
                    for &(sx, wx) in self.x.taps(ox) {
                        let s = (sy * sw + sx) * channels;
                        let w = wx * wy;
                        for c in 0..channels {
                            out[o + c] += w * src[s + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Transpose of [`Resampler::down`]: spreads coarse gradients back onto
    /// the fine grid.
    pub fn down_adjoint(&self, grad: &[f64], channels: usize) -> Vec<f64> {
        if self.is_identity() {
            return grad.to_vec();
        }
        let (sw, sh, dw, dh) = (self.x.src, self.y.src, self.x.dst, self.y.dst);
        let mut out = vec![0.0; sw * sh * channels];
        for oy in 0..dh {
            for &(sy, wy) in self.y.taps(oy) {
                for ox in 0..dw {
                    let o = (oy * dw + ox) * channels;
                    for &(sx, wx) in self.x.taps(ox) {
                        let s = (sy * sw + sx) * channels;
                        let w = wx * wy;
                        for c in 0..channels {
                            out[s + c] += w * grad[o + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// For each fine pixel, the coarse pixel containing its center.
    pub fn containing(&self, sx: usize, sy: usize) -> (usize, usize) {
        let f = |i: usize, f: &AreaFilter| (((i as f64 + 0.5) * f.dst as f64 / f.src as f64) as usize).min(f.dst - 1);
        (f(sx, &self.x), f(sy, &self.y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_partition_each_output() {
        for (src, dst) in [(192, 128), (7, 3), (5, 5), (100, 1)] {
            let f = AreaFilter::new(src, dst);
            let mut per_source = vec![0.0; src];
            for x in 0..dst {
                let s: f64 = f.taps(x).iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
                for &(i, w) in f.taps(x) {
                    per_source[i] += w;
                }
            }
            // every source cell is fully used once, scaled by dst/src
            for w in per_source {
                assert!((w - dst as f64 / src as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integer_factor_is_block_mean() {
        let r = Resampler::new(4, 2, 2, 1);
        let img = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(r.down(&img, 1), vec![3.5, 5.5]);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Resampler::new(23, 17, 15, 11);
        let a: Vec<f64> = (0..23 * 17 * 2).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..15 * 11 * 2).map(|_| rng.gen()).collect();
        let lhs: f64 = r.down(&a, 2).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(r.down_adjoint(&b, 2)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
