//! Single-class anchor-based detector with a feature pyramid and focal loss.

mod anchors;
mod assign;
mod focal;
mod loss;
mod model;

pub use anchors::{build_anchors, AnchorConfig};
pub use assign::{assign_targets, decode, encode, AnchorLabel, Assignment, BG_IOU, FG_IOU};
pub use focal::{focal_loss, sigmoid_focal, FocalLossConfig, PROB_EPS};
pub use loss::{loss_from_outputs, smooth_l1, DetectionLoss};
pub use model::{Detector, DetectorConfig, DetectorTrace, HeadOutput, MAX_STRIDE, STRIDES};
