use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters of the style-transfer stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub lambda_cls: f64,
    pub lambda_rec: f64,
    pub lambda_gp: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Critic updates; the generator is updated on every `n_critic`-th one.
    pub iterations: usize,
    pub batch_size: usize,
    pub n_critic: usize,
    pub patch_size: usize,
    pub g_channels: usize,
    pub g_res_blocks: usize,
    pub d_channels: usize,
    pub d_downsamples: usize,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_rec: 10.0,
            lambda_gp: 10.0,
            lr_g: 2e-3,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            iterations: 5000,
            batch_size: 8,
            n_critic: 5,
            patch_size: 64,
            g_channels: 8,
            g_res_blocks: 4,
            d_channels: 8,
            d_downsamples: 4,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_rec", self.lambda_rec),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.iterations == 0 {
            return bad("iterations must be > 0");
        }
        if self.batch_size == 0 || self.n_critic == 0 {
            return bad("batch_size and n_critic must be > 0");
        }
        if self.g_channels == 0 || self.d_channels == 0 {
            return bad("channel widths must be > 0");
        }
        if self.patch_size % 4 != 0 {
            return bad("patch_size must be divisible by 4");
        }
        if self.d_downsamples == 0 || self.patch_size % (1 << self.d_downsamples) != 0 {
            return bad("d_downsamples must be >= 1 and divide patch_size");
        }
        Ok(())
    }
}
