use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities are clamped to at least this value inside the logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalLossConfig {
    pub gamma: f64,
    /// Weight of the positive class; negatives get `1 - alpha`.
    pub alpha: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "focal loss needs gamma >= 0 and alpha in [0, 1], got {} and {}",
                self.gamma, self.alpha
            )));
        }
        Ok(())
    }
}

/// `-α_t (1 - p_t)^γ log(p_t)` for the probability `p_t` of the true class.
pub fn focal_loss(gamma: f64, alpha_t: f64, p_t: f64) -> f64 {
    let p = p_t.clamp(PROB_EPS, 1.0);
    let l = -alpha_t * (1.0 - p).powf(gamma) * p.ln();
    // avoid -0.0 at p_t = 1
    l.max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of a sigmoid logit and its derivative with respect to the
/// logit.
pub fn sigmoid_focal(cfg: &FocalLossConfig, logit: f64, positive: bool) -> (f64, f64) {
    let (alpha_t, sign) = if positive { (cfg.alpha, 1.0) } else { (1.0 - cfg.alpha, -1.0) };
    let p_t = sigmoid(sign * logit);
    let loss = focal_loss(cfg.gamma, alpha_t, p_t);
    let q = 1.0 - p_t;
    let g = cfg.gamma;
    // dL/dp_t * dp_t/dz with dp_t/dz = sign * p_t * q, folded to stay finite
    // at p_t = 1.
    let grad = if p_t > PROB_EPS {
        sign * alpha_t * (g * p_t * q.powf(g) * p_t.ln() - q.powf(g + 1.0))
    } else {
        sign * alpha_t * g * p_t * q.powf(g) * PROB_EPS.ln()
    };
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_of_the_formula() {
        assert!((focal_loss(0.0, 1.0, 0.5) - 0.693147).abs() < 1e-6);
        assert!((focal_loss(2.0, 0.25, 0.9) - 2.634e-4).abs() < 1e-7);
        assert_eq!(focal_loss(2.0, 0.25, 1.0), 0.0);
        assert!(focal_loss(2.0, 0.25, 0.0).is_finite());
    }

    #[test]
    fn reduces_to_cross_entropy() {
        for i in 1..=100 {
            let p = i as f64 / 100.0;
            assert!((focal_loss(0.0, 1.0, p) + p.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn decreasing_in_p() {
        let mut last = f64::INFINITY;
        for i in 1..=1000 {
            let v = focal_loss(2.0, 0.25, i as f64 / 1000.0);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn logit_gradient_matches_difference() {
        let cfg = FocalLossConfig::default();
        for positive in [true, false] {
            for z in [-6.0, -1.3, 0.0, 0.4, 2.5, 7.0] {
                let h = 1e-6;
                let num = (sigmoid_focal(&cfg, z + h, positive).0 - sigmoid_focal(&cfg, z - h, positive).0) / (2.0 * h);
                let (_, g) = sigmoid_focal(&cfg, z, positive);
                assert!((num - g).abs() < 1e-7 + 1e-5 * g.abs(), "z {z} {positive}: {num} vs {g}");
            }
        }
    }
}
