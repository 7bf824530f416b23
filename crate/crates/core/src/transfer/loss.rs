use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Critique, Discriminator, Generator};
use super::TransferConfig;
use crate::nn::{Real, Tensor};
use crate::style::{StyleCode, NUM_DOMAINS};
use crate::Result;

/// A critic with a per-sample realness score and a domain classifier.
pub trait Critic<T: Real> {
    fn critique(&self, x: &Tensor<T>) -> Critique<T>;

    /// Gradient of every sample's score with respect to that sample. May
    /// leave parameter gradients dirty.
    fn score_gradient(&mut self, x: &Tensor<T>) -> Tensor<T>;
}

/// A conditional image-to-image map.
pub trait StyleMap<T: Real> {
    fn translate(&self, x: &Tensor<T>, codes: &[StyleCode]) -> Result<Tensor<T>>;
}

impl<T: Real> Critic<T> for Discriminator<T> {
    fn critique(&self, x: &Tensor<T>) -> Critique<T> {
        self.infer(x)
    }

    fn score_gradient(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (_, trace) = self.forward(x);
        let ones = vec![T::one(); x.n()];
        self.backward(&trace, &ones, None, true).expect("input gradient")
    }
}

impl<T: Real> StyleMap<T> for Generator<T> {
    fn translate(&self, x: &Tensor<T>, codes: &[StyleCode]) -> Result<Tensor<T>> {
        Generator::translate(self, x, codes)
    }
}

/// Mean softmax cross-entropy of `NUM_DOMAINS`-way logits and its gradient
/// with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &[T], labels: &[usize]) -> (f64, Vec<T>) {
    assert_eq!(logits.len(), labels.len() * NUM_DOMAINS, "logit count");
    let n = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * NUM_DOMAINS..(i + 1) * NUM_DOMAINS];
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        loss += z.ln() + max - row[label].f64();
        for k in 0..NUM_DOMAINS {
            let p = exp[k] / z;
            let t = if k == label { 1.0 } else { 0.0 };
            grad[i * NUM_DOMAINS + k] = T::of((p - t) / n);
        }
    }
    (loss / n, grad)
}

/// Domain classification losses on real patches against their true domains
/// and on generated patches against their target domains.
pub fn classification_losses<T: Real>(
    d: &impl Critic<T>,
    real: &Tensor<T>,
    real_domains: &[usize],
    fake: &Tensor<T>,
    target_domains: &[usize],
) -> (f64, f64) {
    let r = cross_entropy(&d.critique(real).logits, real_domains).0;
    let f = cross_entropy(&d.critique(fake).logits, target_domains).0;
    (r, f)
}

/// Mean absolute difference between `x` and its round trip through the
/// target codes and back to the original codes.
pub fn reconstruction_loss<T: Real>(
    g: &impl StyleMap<T>,
    x: &Tensor<T>,
    target: &[StyleCode],
    original: &[StyleCode],
) -> Result<f64> {
    let fake = g.translate(x, target)?;
    let back = g.translate(&fake, original)?;
    Ok(x.mean_abs_diff(&back))
}

/// `eps * real + (1 - eps) * fake`, one mixing weight per sample.
pub fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, eps: &[f64]) -> Tensor<T> {
    assert_eq!(real.shape(), fake.shape());
    assert_eq!(eps.len(), real.n());
    let mut out = real.clone();
    for (i, &e) in eps.iter().enumerate() {
        let (e, f) = (T::of(e), fake.sample(i));
        for (o, &b) in out.sample_mut(i).iter_mut().zip(f) {
            *o = e * *o + (T::one() - e) * b;
        }
    }
    out
}

/// Per-sample gradient norms and the penalty `mean((norm - 1)^2)`.
pub fn penalty_from_gradient<T: Real>(grad: &Tensor<T>) -> (f64, Vec<f64>) {
    let norms: Vec<f64> = (0..grad.n())
        .map(|i| grad.sample(i).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
        .collect();
    let gp = norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / norms.len().max(1) as f64;
    (gp, norms)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adversarial {
    /// `E[D(real)] - E[D(fake)]`
    pub adv: f64,
    pub gradient_penalty: f64,
}

/// Wasserstein critic objective with a gradient penalty on random
/// interpolates between `real` and `fake`.
pub fn adversarial_loss<T: Real>(
    d: &mut impl Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut impl Rng,
) -> Adversarial {
    let mean = |v: &[T]| v.iter().map(|s| s.f64()).sum::<f64>() / v.len().max(1) as f64;
    let adv = mean(&d.critique(real).scores) - mean(&d.critique(fake).scores);
    let eps: Vec<f64> = (0..real.n()).map(|_| rng.random::<f64>()).collect();
    let mixed = interpolate(real, fake, &eps);
    let (gradient_penalty, _) = penalty_from_gradient(&d.score_gradient(&mixed));
    Adversarial { adv, gradient_penalty }
}

/// Component losses entering the two objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossPieces {
    pub adv: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
    pub rec: f64,
    pub gradient_penalty: f64,
}

/// `(L_D, L_G)` with `L_D = -L_adv + λ_cls L_cls_r + λ_gp gp` and
/// `L_G = L_adv + λ_cls L_cls_f + λ_rec L_rec`.
pub fn total_losses(cfg: &TransferConfig, p: &LossPieces) -> (f64, f64) {
    let l_d = -p.adv + cfg.lambda_cls * p.cls_real + cfg.lambda_gp * p.gradient_penalty;
    let l_g = p.adv + cfg.lambda_cls * p.cls_fake + cfg.lambda_rec * p.rec;
    (l_d, l_g)
}
