//! Progressive optimization: layout initialization, the loss stack, Adam,
//! adaptive pruning and subdivision, and the training loop.

mod adam;
mod adapt;
mod config;
mod init;
mod loss;
mod train;

pub use adam::{Adam, AdamParams};
pub use adapt::{
    gather_max_weight, max_sampling_rate, prune, sampling_rate, sampling_rates, select_for_subdivision,
    subdivide_by_priority, VoxelStats,
};
pub use config::{LearningRates, LossWeights, TrainConfig};
pub use init::{init_bounded, init_unbounded, point_observed, shell_voxels, unbounded_region};
pub use loss::{
    depth_normal_loss, mse, ssim, ssim_loss, ssim_with_grad, tv_loss, DepthNormalLoss, SSIM_C1, SSIM_C2, SSIM_SIGMA,
    SSIM_WINDOW, SURFACE_TRANSMITTANCE,
};
pub use train::{
    initial_scene, loss_and_gradients, train, train_from, LogRecord, LossTerms, StepOutput, TrainEvent, TrainView,
};
