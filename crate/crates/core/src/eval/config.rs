use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Largest centre distance, in pixels, at which a detection matches a figure.
    pub match_radius: f64,
    pub tile_overlap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.7,
            nms_iou: 0.5,
            match_radius: 25.0,
            tile_overlap: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.score_threshold) || !unit.contains(&self.nms_iou) {
            return Err(Error::Config(format!(
                "score_threshold and nms_iou must lie in [0, 1], got {} and {}",
                self.score_threshold, self.nms_iou
            )));
        }
        if !(self.match_radius > 0.0) {
            return Err(Error::Config(format!("match_radius must be > 0, got {}", self.match_radius)));
        }
        if self.tile_overlap >= patch_size {
            return Err(Error::Config(format!(
                "tile_overlap {} must be smaller than the patch size {patch_size}",
                self.tile_overlap
            )));
        }
        Ok(())
    }
}
