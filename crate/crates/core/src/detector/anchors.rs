use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::{Error, Result};

/// Square-ish prior boxes tiled over every cell of each pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Base side per pyramid level, finest first.
    pub base_sizes: Vec<f64>,
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    /// Three levels, all with base 50 to match the fixed annotation box.
    fn default() -> Self {
        Self {
            base_sizes: vec![50.0; 3],
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            aspect_ratios: vec![1.0],
        }
    }
}

impl AnchorConfig {
    pub fn with_bases(base_sizes: Vec<f64>) -> Self {
        Self {
            base_sizes,
            ..Self::default()
        }
    }

    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn levels(&self) -> usize {
        self.base_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.base_sizes) || !positive(&self.scales) || !positive(&self.aspect_ratios) {
            return Err(Error::Config("anchor sizes, scales and ratios must be positive".into()));
        }
        Ok(())
    }

    /// Anchor sides of `level`: `base * scale` for each scale.
    pub fn sides(&self, level: usize) -> Result<Vec<f64>> {
        let base = self.base_sizes.get(level).ok_or(Error::InvalidLevel {
            level,
            levels: self.levels(),
        })?;
        Ok(self.scales.iter().map(|s| base * s).collect())
    }
}

/// Anchors of one level, ordered by cell (row-major), then ratio, then scale.
/// Cell `(r, c)` is centred at `((c + 0.5) * stride, (r + 0.5) * stride)`.
pub fn build_anchors(cfg: &AnchorConfig, level: usize, feature_stride: f64, feature_size: usize) -> Result<Vec<Rect>> {
    let sides = cfg.sides(level)?;
    let mut out = Vec::with_capacity(feature_size * feature_size * cfg.per_cell());
    for r in 0..feature_size {
        for c in 0..feature_size {
            let cx = (c as f64 + 0.5) * feature_stride;
            let cy = (r as f64 + 0.5) * feature_stride;
            for &ratio in &cfg.aspect_ratios {
                let k = ratio.sqrt();
                for &side in &sides {
                    out.push(Rect::centered(cx, cy, side * k, side / k));
                }
            }
        }
    }
    Ok(out)
}
