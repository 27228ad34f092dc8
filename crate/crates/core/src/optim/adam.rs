use crate::error::{Error, Result};
use crate::raster::SceneGradients;
use crate::real::Real;
use crate::scene::{Remap, SparseScene};

use super::config::LearningRates;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction over the density pool and the SH coefficients.
/// The first three SH coefficients of a voxel (the DC term) get their own
/// learning rate.
#[derive(Clone, Debug)]
pub struct Adam {
    pub params: AdamParams,
    pub step: u64,
    m_density: Vec<f64>,
    v_density: Vec<f64>,
    m_sh: Vec<f64>,
    v_sh: Vec<f64>,
    sh_stride: usize,
}

fn check_finite<R: Real>(group: &'static str, g: &[R]) -> Result<()> {
    match g.iter().position(|x| !x.to_f64().is_finite()) {
        Some(index) => Err(Error::NonFinite {
            group,
            index,
            value: g[index].to_f64(),
        }),
        None => Ok(()),
    }
}

impl Adam {
    pub fn new<R: Real>(scene: &SparseScene<R>, params: AdamParams) -> Self {
        Adam {
            params,
            step: 0,
            m_density: vec![0.0; scene.pool_len()],
            v_density: vec![0.0; scene.pool_len()],
            m_sh: vec![0.0; scene.sh.len()],
            v_sh: vec![0.0; scene.sh.len()],
            sh_stride: scene.sh_stride(),
        }
    }

    /// One update. Non-finite gradients abort before anything changes.
    pub fn update<R: Real>(
        &mut self,
        scene: &mut SparseScene<R>,
        grads: &SceneGradients<R>,
        lr: &LearningRates,
    ) -> Result<()> {
        if grads.density.len() != scene.pool_len() || grads.sh.len() != scene.sh.len() {
            return Err(Error::invalid("gradient shapes do not match the scene"));
        }
        if self.m_density.len() != scene.pool_len() || self.m_sh.len() != scene.sh.len() {
            return Err(Error::InvalidState("optimizer state does not match the scene".into()));
        }
        check_finite("density", &grads.density)?;
        check_finite("sh", &grads.sh)?;
        self.step += 1;
        let p = self.params;
        let c1 = 1.0 - p.beta1.powi(self.step as i32);
        let c2 = 1.0 - p.beta2.powi(self.step as i32);
        let apply = |x: &mut R, g: R, m: &mut f64, v: &mut f64, lr: f64| {
            let g = g.to_f64();
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let delta = lr * (*m / c1) / ((*v / c2).sqrt() + p.eps);
            *x = R::of(x.to_f64() - delta);
        };
        for (i, x) in scene.density.iter_mut().enumerate() {
            apply(x, grads.density[i], &mut self.m_density[i], &mut self.v_density[i], lr.density);
        }
        for (i, x) in scene.sh.iter_mut().enumerate() {
            let rate = if i % self.sh_stride < 3 { lr.sh0 } else { lr.sh_rest };
            apply(x, grads.sh[i], &mut self.m_sh[i], &mut self.v_sh[i], rate);
        }
        Ok(())
    }

    /// Carries moments through a scene adaptation; entries without a source
    /// start from zero.
    pub fn remap(&mut self, remap: &Remap) {
        let carry = |old: &[f64], src: &[Option<usize>], stride: usize| -> Vec<f64> {
            src.iter()
                .flat_map(|s| match s {
                    Some(o) => old[o * stride..(o + 1) * stride].to_vec(),
                    None => vec![0.0; stride],
                })
                .collect()
        };
        self.m_density = carry(&self.m_density, &remap.pool_source, 1);
        self.v_density = carry(&self.v_density, &remap.pool_source, 1);
        self.m_sh = carry(&self.m_sh, &remap.voxel_source, self.sh_stride);
        self.v_sh = carry(&self.v_sh, &remap.voxel_source, self.sh_stride);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{OctPath, SceneBounds};

    fn scene() -> SparseScene<f64> {
        let b = SceneBounds::new([0.0; 3], 2.0).unwrap();
        let v: Vec<OctPath> = (0..2u64).map(|c| OctPath::new(c << 45, 1).unwrap()).collect();
        SparseScene::from_voxels(b, 1, &v, 0.5, &[0.1; 12]).unwrap()
    }

    const PARAMS: AdamParams = AdamParams {
        beta1: 0.1,
        beta2: 0.99,
        eps: 1e-15,
    };
    const LR: LearningRates = LearningRates {
        density: 0.025,
        sh0: 0.01,
        sh_rest: 0.00025,
    };

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = scene();
        let before = s.clone();
        let mut adam = Adam::new(&s, PARAMS);
        let g = SceneGradients::zeros_like(&s);
        for _ in 0..5 {
            adam.update(&mut s, &g, &LR).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_by_hand() {
        let mut s = scene();
        let mut adam = Adam::new(&s, PARAMS);
        let mut g = SceneGradients::zeros_like(&s);
        g.density[0] = 0.3;
        g.sh[0] = -2.0;
        g.sh[5] = 1e-3;
        adam.update(&mut s, &g, &LR).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let step = |lr: f64, g: f64| lr * g / (g.abs() + 1e-15);
        assert!((s.density[0] - (0.5 - step(0.025, 0.3))).abs() < 1e-15);
        assert!((s.sh[0] - (0.1 - step(0.01, -2.0))).abs() < 1e-15);
        assert!((s.sh[5] - (0.1 - step(0.00025, 1e-3))).abs() < 1e-15);
        assert_eq!(s.density[1], 0.5);
    }

    #[test]
    fn constant_gradient_steady_state() {
        let mut s = scene();
        let mut adam = Adam::new(&s, PARAMS);
        let mut g = SceneGradients::zeros_like(&s);
        g.density.iter_mut().for_each(|x| *x = 7.0);
        let mut prev = s.density[0];
        for _ in 0..200 {
            adam.update(&mut s, &g, &LR).unwrap();
            let step = prev - s.density[0];
            assert!((step - 0.025).abs() < 1e-9, "{step}");
            prev = s.density[0];
        }
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut s = scene();
        let before = s.clone();
        let mut adam = Adam::new(&s, PARAMS);
        let mut g = SceneGradients::zeros_like(&s);
        g.sh[4] = f64::NAN;
        match adam.update(&mut s, &g, &LR) {
            Err(Error::NonFinite { group, index, .. }) => assert_eq!((group, index), ("sh", 4)),
            other => panic!("{other:?}"),
        }
        assert_eq!(s, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn remap_carries_moments() {
        let mut s = scene();
        let mut adam = Adam::new(&s, PARAMS);
        let mut g = SceneGradients::zeros_like(&s);
        g.density.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 + 1.0);
        adam.update(&mut s, &g, &LR).unwrap();
        let r = s.subdivide(&[1]);
        adam.remap(&r);
        assert_eq!(adam.m_density.len(), s.pool_len());
        assert_eq!(adam.m_sh.len(), s.sh.len());
        for (new, src) in r.pool_source.iter().enumerate() {
            match src {
                Some(o) => assert_eq!(adam.m_density[new], 0.9 * (*o as f64 + 1.0)),
                None => assert_eq!(adam.m_density[new], 0.0),
            }
        }
    }
}
