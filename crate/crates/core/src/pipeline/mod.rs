//! Detector training: balanced patch sampling, style augmentation,
//! rotation and the SGD loop.

mod config;
mod sampling;
mod train;

pub use config::{lr_schedule, TrainConfig};
pub use sampling::{
    maybe_style_transfer, sample_training_batch, PatchSampler, Sample, StyleTransfer, FIGURE_MARGIN,
};
pub use train::{
    augment, train_detector, train_detector_with, DetectorLosses, DetectorOutcome, DetectorState,
};
