use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scanner domain {0}: transfer targets are 0..=3")]
    InvalidDomain(u8),
    #[error("invalid style code {0:?}: components must be >= 0 and sum to 1")]
    InvalidStyleCode([f64; 4]),
    #[error("rotation angle {0} is not one of 0, 90, 180, 270")]
    InvalidAngle(u32),
    #[error("pixel value {0} outside [0, 255]")]
    InvalidPixelRange(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("could not place {wanted} figures with the required spacing (placed {placed})")]
    PlacementFailure { wanted: usize, placed: usize },
    #[error("corpus format error at {}: {reason}", path.display())]
    CorpusFormat { path: PathBuf, reason: String },
    #[error("training data is missing domain(s) {0:?}")]
    InsufficientDomains(Vec<u8>),
    #[error("domain {0} has no foreground patches")]
    InsufficientForeground(u8),
    #[error("domain {0}: no background patch location found")]
    InsufficientBackground(u8),
    #[error("anchor level {level} out of range ({levels} levels configured)")]
    InvalidLevel { level: usize, levels: usize },
    #[error("iteration {iteration} outside schedule of {total} iterations")]
    InvalidIteration { iteration: usize, total: usize },
    #[error("patch size {patch} does not fit a {width}x{height} slide")]
    Tile { patch: usize, width: usize, height: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("unknown slide ids in predictions: {0:?}")]
    UnknownSlides(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
