//! Slide-level inference and detection metrics.

mod config;
mod infer;
mod metrics;
mod nms;
mod tile;

pub use config::EvalConfig;
pub use infer::{infer_slide, infer_slides, Predictions};
pub use metrics::{evaluate, read_predictions, write_predictions, Counts, EvalReport};
pub use nms::nms;
pub use tile::{tile_offsets, tile_slide, Tile};
