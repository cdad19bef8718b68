//! Losses, the Adam optimizer with a staircase schedule, the training loop
//! and the finite-difference gradient harness.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use gradcheck::{
    central_difference_check, check_conv2d, check_model, check_patch_affine, check_res_unit,
    grad_check, tiny_config, GradEntry, GradReport, GRAD_TOLERANCE,
};
pub use loss::{pixel_loss, relative_loss, relative_to_target, smooth_target, LossSpec};
pub use optim::{adam_step, lr_schedule, AdamConfig, LrSchedule, OptimizerState};
pub use trainer::{
    evaluate, input_scales, predict, prepare, train, validation_indices, PreparedSet, TrainOutcome,
    TrainSettings,
};
