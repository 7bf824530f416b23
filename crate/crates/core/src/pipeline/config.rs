use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::patch::Rotation;
use crate::{Error, Result};

/// Detector training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Expected background patches per foreground patch.
    pub bg_fg_ratio: f64,
    /// Sample background patches only (the `bg_fg_ratio → ∞` limit).
    pub background_only: bool,
    /// Probability of restyling a training patch with a random style code.
    pub style_prob: f64,
    pub rotations: Vec<u32>,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_milestone_fractions: Vec<f64>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_grad_norm: f64,
    pub patch_size: usize,
    pub seed: u64,
    pub detector: DetectorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bg_fg_ratio: 6.0,
            background_only: false,
            style_prob: 0.2,
            rotations: vec![0, 90, 180, 270],
            iterations: 2000,
            batch_size: 14,
            lr_start: 0.2,
            lr_milestone_fractions: vec![0.64, 0.90],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_grad_norm: 1.0,
            patch_size: 128,
            seed: 0,
            detector: DetectorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.style_prob) {
            return bad(format!("style_prob must lie in [0, 1], got {}", self.style_prob));
        }
        if !(self.bg_fg_ratio > 0.0) {
            return bad(format!("bg_fg_ratio must be > 0, got {}", self.bg_fg_ratio));
        }
        if self.rotations.is_empty() {
            return bad("rotations must not be empty".into());
        }
        for &r in &self.rotations {
            Rotation::from_degrees(r)?;
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch_size must be > 0".into());
        }
        let f = &self.lr_milestone_fractions;
        if f.iter().any(|v| !(*v > 0.0 && *v < 1.0)) || f.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestone fractions must increase strictly inside (0, 1), got {f:?}"));
        }
        if !(self.lr_start > 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr_start and lr_decay must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) || !(self.clip_grad_norm >= 0.0) {
            return bad("momentum must lie in [0, 1); weight_decay and clip_grad_norm must be >= 0".into());
        }
        if self.patch_size < 64 || self.patch_size % crate::detector::MAX_STRIDE != 0 {
            return bad(format!(
                "patch_size must be >= 64 and divisible by {}",
                crate::detector::MAX_STRIDE
            ));
        }
        self.detector.validate()
    }

    /// Probability that a sampled patch is a foreground patch.
    pub fn foreground_prob(&self) -> f64 {
        if self.background_only {
            0.0
        } else {
            1.0 / (1.0 + self.bg_fg_ratio)
        }
    }

    /// Iterations at which the learning rate drops.
    pub fn milestones(&self) -> Vec<usize> {
        self.lr_milestone_fractions
            .iter()
            .map(|f| (f * self.iterations as f64).round() as usize)
            .collect()
    }
}

/// Step schedule: `lr_start`, multiplied by `lr_decay` at each milestone.
pub fn lr_schedule(cfg: &TrainConfig, iteration: usize) -> Result<f64> {
    if iteration >= cfg.iterations {
        return Err(Error::InvalidIteration {
            iteration,
            total: cfg.iterations,
        });
    }
    let drops = cfg.milestones().iter().filter(|&&m| iteration >= m).count();
    Ok(cfg.lr_start * cfg.lr_decay.powi(drops as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn long_schedule() {
        let cfg = TrainConfig { iterations: 500_000, ..Default::default() };
        assert!(close(lr_schedule(&cfg, 0).unwrap(), 0.2));
        assert!(close(lr_schedule(&cfg, 319_999).unwrap(), 0.2));
        assert!(close(lr_schedule(&cfg, 320_000).unwrap(), 0.02));
        assert!(close(lr_schedule(&cfg, 450_000).unwrap(), 0.002));
    }

    #[test]
    fn toy_schedule_and_monotone() {
        let cfg = TrainConfig { iterations: 10_000, ..Default::default() };
        assert!(close(lr_schedule(&cfg, 6_399).unwrap(), 0.2));
        assert!(close(lr_schedule(&cfg, 6_400).unwrap(), 0.02));
        let mut last = f64::INFINITY;
        for it in 0..10_000 {
            let lr = lr_schedule(&cfg, it).unwrap();
            assert!(lr <= last);
            last = lr;
        }
        assert!(matches!(lr_schedule(&cfg, 10_000), Err(Error::InvalidIteration { .. })));
    }

    #[test]
    fn validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { style_prob: 1.5, ..Default::default() },
            TrainConfig { bg_fg_ratio: 0.0, ..Default::default() },
            TrainConfig { lr_milestone_fractions: vec![0.9, 0.64], ..Default::default() },
            TrainConfig { rotations: vec![45], ..Default::default() },
            TrainConfig { patch_size: 100, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn foreground_probability() {
        let cfg = TrainConfig::default();
        assert!(close(cfg.foreground_prob(), 1.0 / 7.0));
        let cfg = TrainConfig { background_only: true, ..Default::default() };
        assert_eq!(cfg.foreground_prob(), 0.0);
    }
}
