//! Multi-scale supervision, the loss-weight schedule, the optimizer, the
//! training loop and the synthetic data generator.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod synthetic;
mod trainer;

pub use loss::{ground_truth_pyramid, scale_loss, smooth_l1, total_loss};
pub use optim::{Adam, AdamConfig};
pub use schedule::{LossSchedule, Round};
pub use synthetic::{generate_dataset, generate_synthetic_pair, StereoSample, SyntheticSpec, TextureMode};
pub use trainer::{
    crop, evaluate, predict_disparity, reflect_pad, sample_epe, train, train_with_progress, EpochRecord, TrainConfig,
    TrainingLog,
};
