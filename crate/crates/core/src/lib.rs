pub mod error;
pub mod eval;
pub mod checkpoint;
pub mod detector;
pub mod geometry;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod seed;
pub mod style;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
