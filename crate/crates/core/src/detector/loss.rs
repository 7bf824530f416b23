use super::assign::{assign_targets, AnchorLabel, Assignment};
use super::focal::sigmoid_focal;
use super::model::{Detector, DetectorConfig, HeadOutput};
use crate::geometry::GroundTruthBox;
use crate::nn::{Module, Real, Tensor};
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectionLoss {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    pub foreground: usize,
}

/// `0.5 d² / β` inside `|d| < β`, `|d| - β/2` outside; returns value and slope.
pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Loss of raw head outputs against per-image assignments, with gradients
/// of the same layout as `out`.
///
/// Focal loss is summed over non-ignored anchors, smooth-L1 over the four
/// offsets of foreground anchors; both are divided by the foreground count
/// of the batch (at least one).
pub fn loss_from_outputs<T: Real>(
    cfg: &DetectorConfig,
    out: &HeadOutput<T>,
    assignments: &[Assignment],
) -> (DetectionLoss, Vec<T>, Vec<T>) {
    let per = out.anchors_per_image;
    let foreground: usize = assignments.iter().map(|a| a.foreground()).sum();
    let norm = foreground.max(1) as f64;
    let mut dlogits = vec![T::zero(); out.logits.len()];
    let mut ddeltas = vec![T::zero(); out.deltas.len()];
    let (mut cls, mut reg) = (0.0, 0.0);
    for (i, a) in assignments.iter().enumerate() {
        for (k, label) in a.labels.iter().enumerate() {
            let idx = i * per + k;
            if *label == AnchorLabel::Ignore {
                continue;
            }
            let fg = *label == AnchorLabel::Foreground;
            let (l, g) = sigmoid_focal(&cfg.focal, out.logits[idx].f64(), fg);
            cls += l;
            dlogits[idx] = T::of(g / norm);
            if fg {
                for j in 0..4 {
                    let d = out.deltas[idx * 4 + j].f64() - a.targets[k][j];
                    let (l, g) = smooth_l1(d, cfg.smooth_l1_beta);
                    reg += l;
                    ddeltas[idx * 4 + j] = T::of(g / norm);
                }
            }
        }
    }
    let (cls, reg) = (cls / norm, reg / norm);
    (
        DetectionLoss {
            cls,
            reg,
            total: cls + reg,
            foreground,
        },
        dlogits,
        ddeltas,
    )
}

impl<T: Real> Detector<T> {
    fn assignments(&self, size: usize, ground_truth: &[Vec<GroundTruthBox>]) -> Vec<Assignment> {
        let anchors = self.anchors(size);
        ground_truth.iter().map(|g| assign_targets(&anchors, g)).collect()
    }

    /// Loss of a batch with patch-frame ground truth, one list per image.
    pub fn loss(&self, x: &Tensor<T>, ground_truth: &[Vec<GroundTruthBox>]) -> Result<DetectionLoss> {
        let out = self.infer(x)?;
        let a = self.assignments(x.h(), ground_truth);
        Ok(loss_from_outputs(&self.config, &out, &a).0)
    }

    /// Zeroes, then accumulates, the parameter gradients of [`Detector::loss`].
    pub fn loss_gradients(&mut self, x: &Tensor<T>, ground_truth: &[Vec<GroundTruthBox>]) -> Result<DetectionLoss> {
        assert_eq!(x.n(), ground_truth.len(), "one ground-truth list per image");
        self.zero_grad();
        let (out, trace) = self.forward(x)?;
        let a = self.assignments(x.h(), ground_truth);
        let (loss, dl, dd) = loss_from_outputs(&self.config, &out, &a);
        self.backward(&trace, &dl, &dd);
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::detector::assign::encode;
    use crate::detector::focal::focal_loss;
    use crate::geometry::Rect;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn single_anchor_oracle() {
        let cfg = DetectorConfig::default();
        let anchor = Rect::square(60.0, 60.0, 50.0);
        let gt = GroundTruthBox::new(63.0, 58.0);
        let a = assign_targets(&[anchor], &[gt]);
        let z = 0.7;
        let deltas = [0.1, -0.02, 0.3, 0.0];
        let out = HeadOutput {
            anchors_per_image: 1,
            logits: vec![z],
            deltas: deltas.to_vec(),
        };
        let (loss, _, _) = loss_from_outputs(&cfg, &out, &[a]);
        let t = encode(&anchor, &gt.rect());
        // t = (0.06, -0.04, 0, 0)
        let mut reg = 0.0;
        for j in 0..4 {
            let d: f64 = deltas[j] - t[j];
            reg += if d.abs() < 0.1 { 0.5 * d * d / 0.1 } else { d.abs() - 0.05 };
        }
        let cls = focal_loss(2.0, 0.25, sigmoid(z));
        assert!((loss.total - (cls + reg)).abs() < 1e-12);
        assert_eq!(loss.foreground, 1);
    }

    #[test]
    fn background_only_near_zero_scores() {
        let cfg = DetectorConfig::default();
        let a = assign_targets(&[Rect::square(30.0, 30.0, 50.0); 10], &[]);
        let out = HeadOutput {
            anchors_per_image: 10,
            logits: vec![-12.0; 10],
            deltas: vec![0.5; 40],
        };
        let (loss, _, dd) = loss_from_outputs(&cfg, &out, &[a]);
        assert!(loss.total < 1e-9);
        assert!(dd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_predictions_have_tiny_loss() {
        let cfg = DetectorConfig::default();
        let anchors = [Rect::square(60.0, 60.0, 50.0), Rect::square(140.0, 140.0, 50.0)];
        let gt = GroundTruthBox::new(61.0, 60.0);
        let a = assign_targets(&anchors, &[gt]);
        let mut deltas = vec![0.0; 8];
        deltas[..4].copy_from_slice(&a.targets[0]);
        let out = HeadOutput {
            anchors_per_image: 2,
            logits: vec![20.0, -20.0],
            deltas,
        };
        assert!(loss_from_outputs(&cfg, &out, &[a]).0.total < 1e-12);
    }

    #[test]
    fn smooth_l1_pieces() {
        let (v, g) = smooth_l1(0.05, 0.1);
        assert!((v - 0.0125).abs() < 1e-15 && (g - 0.5).abs() < 1e-15);
        let (v, g) = smooth_l1(-0.3, 0.1);
        assert!((v - 0.25).abs() < 1e-15 && g == -1.0);
    }

    fn small_config() -> DetectorConfig {
        DetectorConfig {
            stem_channels: [4, 4],
            stage_channels: [4, 4, 4],
            fpn_channels: 4,
            norm_groups: 2,
            anchors: crate::detector::AnchorConfig::with_bases(vec![12.0, 12.0, 12.0]),
            ..Default::default()
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = Detector::<f64>::new(small_config(), &mut rng).unwrap();
        // raise head weights so the loss is sensitive everywhere
        m.visit_mut(&mut |p| p.value.iter_mut().for_each(|v| *v *= 1.5));
        let x = Tensor::from_vec([2, 3, 32, 32], (0..2 * 3 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect());
        let gts = vec![vec![GroundTruthBox::new(10.0, 12.0), GroundTruthBox::new(22.0, 20.0)], vec![]];
        m.loss_gradients(&x, &gts).unwrap();
        let grads = m.flat_grads();
        let params = m.flat_params();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for _ in 0..60 {
            let i = rng.random_range(0..params.len());
            let mut p = params.clone();
            let mut probe = m.clone();
            p[i] += h;
            probe.load_flat(&p);
            let up = probe.loss(&x, &gts).unwrap().total;
            p[i] -= 2.0 * h;
            probe.load_flat(&p);
            let down = probe.loss(&x, &gts).unwrap().total;
            let num = (up - down) / (2.0 * h);
            let err = (num - grads[i]).abs() / (num.abs() + grads[i].abs()).max(1e-5);
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "relative error {worst}");
    }
}
