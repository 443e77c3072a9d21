//! Losses, cropping and augmentation, sample preparation and the training loop.

mod data;
mod geometry;
mod loss;
mod schedule;
mod trainer;

pub use data::{AnnotationRecord, FixedSamples, PreparedSample, SampleSource, SampleSpec, SceneTag, Sequence, SequenceSource};
pub use geometry::{
    crop_box, crop_hand, crop_transform, geometric_augment, interpolate_joints, interpolate_track, project_joints,
    rotate_points_z, AugmentConfig, AugmentParams, Augmented, Crop, CROP_EXPANSION, CROP_SIZE, MIN_CROP_SIDE,
};
pub use loss::{joint_loss, total_loss, total_loss_tensor, vertex_loss, LossBreakdown, LossWeights, StepTargets, JOINT_LOSS_EPS};
pub use schedule::{cosine_lr, sample_event_count, EventCount, EVAL_EVENT_COUNT, TRAIN_EVENT_RANGE};
pub use trainer::{batch_tensors, train, write_loss_history, LossRecord, TrainConfig, TrainOutputs, TrainReport};
