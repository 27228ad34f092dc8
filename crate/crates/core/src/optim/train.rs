use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::raster::{
    render_backward, render_train, ImageGradients, RayLossWeights, RenderOptions, RenderOutput, SceneGradients,
};
use crate::real::Real;
use crate::scene::{Remap, SparseScene};

use super::adam::{Adam, AdamParams};
use super::adapt::{gather_max_weight, prune, sampling_rates, subdivide_by_priority};
use super::config::{LossWeights, TrainConfig};
use super::init::{init_bounded, init_unbounded};
use super::loss::{depth_normal_loss, mse, ssim_loss, tv_loss};

/// A posed training image; `image` is RGB in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub name: String,
    pub camera: Camera,
    pub image: Vec<f64>,
}

/// Unweighted loss terms of one step plus the weighted total. Inactive
/// terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub ssim: f64,
    pub transmittance: f64,
    pub distortion: f64,
    pub voxel_rgb: f64,
    pub tv: f64,
    pub normal_mean: f64,
    pub normal_median: f64,
    pub total: f64,
}

pub struct StepOutput<R: Real> {
    pub losses: LossTerms,
    pub grads: SceneGradients<R>,
    pub priority: Vec<f64>,
    pub render: RenderOutput,
}

/// Renders `view`, evaluates every active loss term and backpropagates the
/// weighted total to the scene parameters.
pub fn loss_and_gradients<R: Real>(
    scene: &SparseScene<R>,
    view: &TrainView,
    weights: &LossWeights,
    opts: &RenderOptions,
) -> Result<StepOutput<R>> {
    let cam = &view.camera;
    let (out, state) = render_train(scene, cam, opts)?;
    let mut terms = LossTerms::default();
    let (l_mse, mut g_color) = mse(&out.color, &view.image)?;
    terms.mse = l_mse;
    if weights.ssim > 0.0 {
        let (l, g) = ssim_loss(&out.color, &view.image, cam.width, cam.height)?;
        terms.ssim = l;
        g_color.iter_mut().zip(g).for_each(|(a, b)| *a += weights.ssim * b);
    }
    let mut upstream = ImageGradients::zeros(cam.width, cam.height);
    upstream.color = g_color;
    if weights.normal_mean > 0.0 || weights.normal_median > 0.0 {
        let mut g_normal = vec![0.0; out.normal.len()];
        if weights.normal_mean > 0.0 {
            let d = depth_normal_loss(cam, &out.depth, &out.normal, &out.transmittance)?;
            terms.normal_mean = d.loss;
            g_normal.iter_mut().zip(&d.normal).for_each(|(a, b)| *a += weights.normal_mean * b);
            upstream.depth = Some(d.depth.iter().map(|g| weights.normal_mean * g).collect());
        }
        if weights.normal_median > 0.0 {
            // the median depth only serves as a target
            let d = depth_normal_loss(cam, &out.median_depth, &out.normal, &out.transmittance)?;
            terms.normal_median = d.loss;
            g_normal.iter_mut().zip(&d.normal).for_each(|(a, b)| *a += weights.normal_median * b);
        }
        upstream.normal = Some(g_normal);
    }
    let ray_weights = RayLossWeights {
        transmittance: weights.transmittance,
        distortion: weights.distortion,
        voxel_rgb: weights.voxel_rgb,
        target: (weights.voxel_rgb > 0.0).then_some(view.image.as_slice()),
    };
    let back = render_backward(scene, &state, opts, &upstream, &ray_weights)?;
    let mut grads = back.grads;
    if weights.transmittance > 0.0 {
        terms.transmittance = back.losses.transmittance;
    }
    if weights.distortion > 0.0 {
        terms.distortion = back.losses.distortion;
    }
    if weights.voxel_rgb > 0.0 {
        terms.voxel_rgb = back.losses.voxel_rgb;
    }
    if weights.tv > 0.0 {
        let (l, g) = tv_loss(scene);
        terms.tv = l;
        grads.density.iter_mut().zip(g).for_each(|(a, b)| *a += R::of(weights.tv * b));
    }
    terms.total = terms.mse
        + weights.ssim * terms.ssim
        + weights.transmittance * terms.transmittance
        + weights.distortion * terms.distortion
        + weights.voxel_rgb * terms.voxel_rgb
        + weights.tv * terms.tv
        + weights.normal_mean * terms.normal_mean
        + weights.normal_median * terms.normal_median;
    Ok(StepOutput {
        losses: terms,
        grads,
        priority: back.priority,
        render: out,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub view: usize,
    pub losses: LossTerms,
    pub voxels: usize,
    pub pool: usize,
}

impl LogRecord {
    pub fn line(&self) -> String {
        let l = &self.losses;
        format!(
            "iter {} view {} total {:.6e} mse {:.6e} ssim {:.6e} trans {:.6e} dist {:.6e} rgb {:.6e} tv {:.6e} nd_mean {:.6e} nd_med {:.6e} voxels {} pool {}",
            self.iteration,
            self.view,
            l.total,
            l.mse,
            l.ssim,
            l.transmittance,
            l.distortion,
            l.voxel_rgb,
            l.tv,
            l.normal_mean,
            l.normal_median,
            self.voxels,
            self.pool
        )
    }
}

pub enum TrainEvent<'a, R: Real> {
    Step(&'a LogRecord),
    /// The scene after a pruning/subdivision round.
    Adapted { iteration: usize, pruned: usize, subdivided: usize },
    Checkpoint { iteration: usize, scene: &'a SparseScene<R> },
}

/// Builds the initial scene for `views`: the bounded layout when the config
/// has bounds, the unbounded one otherwise.
pub fn initial_scene<R: Real>(views: &[TrainView], cfg: &TrainConfig) -> Result<SparseScene<R>> {
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    match cfg.bounds {
        Some(b) => init_bounded(b, &cams, cfg),
        None => init_unbounded(&cams, cfg),
    }
}

/// Optimizes a scene from `initial` over `views`, following the schedules of
/// `cfg`. Every step, adaptation round and checkpoint is reported through
/// `on_event`; an error from it stops training.
pub fn train_from<R: Real>(
    mut scene: SparseScene<R>,
    views: &[TrainView],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<R>) -> Result<()>,
) -> Result<(SparseScene<R>, Vec<LogRecord>)> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    for v in views {
        if v.image.len() != (v.camera.width * v.camera.height * 3) as usize {
            return Err(Error::invalid(format!("image of view {} does not match its camera", v.name)));
        }
    }
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let opts = cfg.render_options();
    let mut adam = Adam::new(
        &scene,
        AdamParams {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut priority = vec![0.0; scene.len()];
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let vi = order.pop().expect("refilled above");
        let step = loss_and_gradients(&scene, &views[vi], &cfg.weights_at(it), &opts)?;
        priority.iter_mut().zip(&step.priority).for_each(|(a, b)| *a += b);
        adam.update(&mut scene, &step.grads, &cfg.learning_rates_at(it))?;
        let rec = LogRecord {
            iteration: it,
            view: vi,
            losses: step.losses,
            voxels: scene.len(),
            pool: scene.pool_len(),
        };
        on_event(TrainEvent::Step(&rec))?;
        log.push(rec);

        let (do_prune, do_subdivide) = cfg.adapts_at(it);
        if do_prune || do_subdivide {
            let before = scene.len();
            let mut pruned = 0;
            if do_prune {
                let mw = gather_max_weight(&scene, &cams, &opts)?;
                let remap = prune(&mut scene, &mw, cfg.prune_threshold_at(it));
                adam.remap(&remap);
                priority = carry(&priority, &remap);
                pruned = before - scene.len();
            }
            let mut subdivided = 0;
            if do_subdivide {
                let rates = sampling_rates(&scene, &cams);
                let n = scene.len();
                let remap = subdivide_by_priority(
                    &mut scene,
                    &priority,
                    &rates,
                    cfg.subdivide_percent,
                    cfg.sampling_rate_threshold,
                );
                adam.remap(&remap);
                subdivided = (scene.len() - n) / 7;
            }
            priority = vec![0.0; scene.len()];
            on_event(TrainEvent::Adapted {
                iteration: it,
                pruned,
                subdivided,
            })?;
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint {
                iteration: it,
                scene: &scene,
            })?;
        }
    }
    Ok((scene, log))
}

/// [`initial_scene`] followed by [`train_from`].
pub fn train<R: Real>(
    views: &[TrainView],
    cfg: &TrainConfig,
    on_event: impl FnMut(TrainEvent<R>) -> Result<()>,
) -> Result<(SparseScene<R>, Vec<LogRecord>)> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    let scene = initial_scene(views, cfg)?;
    train_from(scene, views, cfg, on_event)
}

fn carry(values: &[f64], remap: &Remap) -> Vec<f64> {
    remap.voxel_source.iter().map(|s| s.map_or(0.0, |o| values[o])).collect()
}
