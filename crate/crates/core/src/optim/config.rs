use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::MAX_SH_DEGREE;
use crate::octree::SceneBounds;
use crate::raster::RenderOptions;

/// Every knob of a training run. Iteration-valued fields refer to the full
/// schedule; [`TrainConfig::scaled`] shrinks them proportionally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Raw density of freshly initialized grid points.
    pub init_density: f64,
    /// Levels of the initial dense grid.
    pub init_level: u8,
    /// Background shell levels around the main region (unbounded init).
    pub background_levels: u8,
    /// Target background/foreground voxel ratio (unbounded init).
    pub background_ratio: f64,
    /// Known scene region. Without it the unbounded layout is used.
    pub bounds: Option<SceneBounds>,
    pub sh_degree: usize,

    pub iterations: usize,
    pub adapt_every: usize,
    pub subdivide_until: usize,
    pub prune_until: usize,
    pub prune_threshold_start: f64,
    pub prune_threshold_end: f64,
    pub subdivide_percent: f64,
    pub sampling_rate_threshold: f64,

    pub lr_density: f64,
    pub lr_sh0: f64,
    pub lr_sh_rest: f64,
    pub lr_decay_at: usize,
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub lambda_ssim: f64,
    pub lambda_transmittance: f64,
    pub lambda_distortion: f64,
    pub distortion_from: usize,
    pub lambda_voxel_rgb: f64,
    pub lambda_tv: f64,
    pub tv_until: usize,
    pub lambda_normal_mean: f64,
    pub normal_mean_from: usize,
    pub lambda_normal_median: f64,
    pub normal_median_from: usize,

    /// Enables the depth-normal losses and `mesh_samples`.
    pub mesh_mode: bool,
    pub samples: usize,
    pub mesh_samples: usize,
    pub t_threshold: f64,
    pub supersample: f64,
    pub background: [f64; 3],

    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_density: -10.0,
            init_level: 6,
            background_levels: 5,
            background_ratio: 2.0,
            bounds: None,
            sh_degree: 3,
            iterations: 20000,
            adapt_every: 1000,
            subdivide_until: 15000,
            prune_until: 18000,
            prune_threshold_start: 1e-4,
            prune_threshold_end: 0.05,
            subdivide_percent: 5.0,
            sampling_rate_threshold: 1.0,
            lr_density: 0.025,
            lr_sh0: 0.01,
            lr_sh_rest: 0.00025,
            lr_decay_at: 19000,
            lr_decay: 0.1,
            adam_beta1: 0.1,
            adam_beta2: 0.99,
            adam_eps: 1e-15,
            lambda_ssim: 0.02,
            lambda_transmittance: 0.01,
            lambda_distortion: 0.1,
            distortion_from: 10000,
            lambda_voxel_rgb: 0.01,
            lambda_tv: 1e-10,
            tv_until: 10000,
            lambda_normal_mean: 0.001,
            normal_mean_from: 10000,
            lambda_normal_median: 0.001,
            normal_median_from: 3000,
            mesh_mode: false,
            samples: 1,
            mesh_samples: 3,
            t_threshold: 1e-4,
            supersample: 1.5,
            background: [0.0; 3],
            seed: 0,
            checkpoint_every: 5000,
        }
    }
}

/// Loss weights in effect at one iteration. Zero means inactive.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossWeights {
    pub ssim: f64,
    pub transmittance: f64,
    pub distortion: f64,
    pub voxel_rgb: f64,
    pub tv: f64,
    pub normal_mean: f64,
    pub normal_median: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub density: f64,
    pub sh0: f64,
    pub sh_rest: f64,
}

impl TrainConfig {
    /// Reads a JSON config; missing fields take their defaults, unknown
    /// fields are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("background_ratio", self.background_ratio),
            ("prune_threshold_start", self.prune_threshold_start),
            ("prune_threshold_end", self.prune_threshold_end),
            ("subdivide_percent", self.subdivide_percent),
            ("sampling_rate_threshold", self.sampling_rate_threshold),
            ("lr_density", self.lr_density),
            ("lr_sh0", self.lr_sh0),
            ("lr_sh_rest", self.lr_sh_rest),
            ("lr_decay", self.lr_decay),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let weights = [
            self.lambda_ssim,
            self.lambda_transmittance,
            self.lambda_distortion,
            self.lambda_voxel_rgb,
            self.lambda_tv,
            self.lambda_normal_mean,
            self.lambda_normal_median,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if self.prune_threshold_start > self.prune_threshold_end {
            return Err(Error::invalid("prune threshold schedule must be non-decreasing"));
        }
        if self.subdivide_percent > 100.0 {
            return Err(Error::invalid("subdivide_percent above 100"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.adapt_every == 0 {
            return Err(Error::invalid("adapt_every must be positive"));
        }
        if self.init_level == 0 || self.init_level > 10 {
            return Err(Error::invalid(format!("init_level {} outside 1..=10", self.init_level)));
        }
        if self.bounds.is_none() && self.init_level as u32 + self.background_levels as u32 > 16 {
            return Err(Error::invalid("init_level + background_levels exceeds the octree depth"));
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid(format!("sh_degree {} above {MAX_SH_DEGREE}", self.sh_degree)));
        }
        self.render_options().validate()
    }

    /// Same schedule compressed to `iterations`: every iteration-valued
    /// field is multiplied by `iterations / self.iterations`.
    pub fn scaled(&self, iterations: usize) -> TrainConfig {
        let f = iterations as f64 / self.iterations.max(1) as f64;
        let s = |n: usize| (n as f64 * f).round() as usize;
        TrainConfig {
            iterations,
            adapt_every: s(self.adapt_every).max(1),
            subdivide_until: s(self.subdivide_until),
            prune_until: s(self.prune_until),
            lr_decay_at: s(self.lr_decay_at),
            distortion_from: s(self.distortion_from),
            tv_until: s(self.tv_until),
            normal_mean_from: s(self.normal_mean_from),
            normal_median_from: s(self.normal_median_from),
            checkpoint_every: s(self.checkpoint_every),
            ..self.clone()
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            samples: if self.mesh_mode { self.mesh_samples } else { self.samples },
            t_threshold: self.t_threshold,
            supersample: self.supersample,
            background: self.background,
        }
    }

    /// Weights for the 1-based iteration `it`.
    pub fn weights_at(&self, it: usize) -> LossWeights {
        let on = |active: bool, w: f64| if active { w } else { 0.0 };
        LossWeights {
            ssim: self.lambda_ssim,
            transmittance: self.lambda_transmittance,
            distortion: on(it > self.distortion_from, self.lambda_distortion),
            voxel_rgb: self.lambda_voxel_rgb,
            tv: on(it <= self.tv_until, self.lambda_tv),
            normal_mean: on(self.mesh_mode && it > self.normal_mean_from, self.lambda_normal_mean),
            normal_median: on(self.mesh_mode && it > self.normal_median_from, self.lambda_normal_median),
        }
    }

    pub fn learning_rates_at(&self, it: usize) -> LearningRates {
        let f = if it > self.lr_decay_at { self.lr_decay } else { 1.0 };
        LearningRates {
            density: self.lr_density * f,
            sh0: self.lr_sh0 * f,
            sh_rest: self.lr_sh_rest * f,
        }
    }

    /// Pruning threshold, linear from start (iteration 0) to end (`prune_until`).
    pub fn prune_threshold_at(&self, it: usize) -> f64 {
        let u = if self.prune_until == 0 { 1.0 } else { (it as f64 / self.prune_until as f64).min(1.0) };
        self.prune_threshold_start + (self.prune_threshold_end - self.prune_threshold_start) * u
    }

    pub fn adapts_at(&self, it: usize) -> (bool, bool) {
        if it == 0 || it % self.adapt_every != 0 || it >= self.iterations {
            return (false, false);
        }
        (it <= self.prune_until, it <= self.subdivide_until)
    }
}
