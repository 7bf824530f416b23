use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{maybe_style_transfer, sample_training_batch, PatchSampler, Sample, StyleTransfer};
use super::{lr_schedule, TrainConfig};
use crate::detector::Detector;
use crate::nn::{Module, Sgd, Tensor};
use crate::patch::{rotate, rotate_boxes, Rotation};
use crate::seed::stream_rng;
use crate::synth::Slide;
use crate::{Error, Result};

/// One row of the detector loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorLosses {
    pub iteration: usize,
    pub lr: f64,
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    pub foreground_anchors: usize,
    pub foreground_patches: usize,
    pub transferred: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Everything needed to continue training where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState {
    pub detector: Detector<f32>,
    pub optimizer: Sgd,
    pub next_iteration: usize,
}

impl DetectorState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            detector: Detector::new(cfg.detector.clone(), &mut rng)?,
            optimizer: Sgd::new(cfg.momentum, cfg.weight_decay),
            next_iteration: 0,
        })
    }
}

pub struct DetectorOutcome {
    pub state: DetectorState,
    pub history: Vec<DetectorLosses>,
}

/// Style transfer with probability `p`, then a rotation drawn from the
/// configured set. Ground truth follows the rotation only.
pub fn augment(
    sample: Sample,
    transfer: Option<&dyn StyleTransfer>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Sample, bool)> {
    let (patch, transferred) = maybe_style_transfer(&sample.patch, transfer, cfg.style_prob, rng)?;
    let angle = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
    let rot = Rotation::from_degrees(angle)?;
    let boxes = rotate_boxes(&sample.boxes, rot, patch.size);
    Ok((
        Sample {
            patch: rotate(&patch, rot),
            boxes,
            foreground: sample.foreground,
        },
        transferred,
    ))
}

/// Trains a detector from scratch on the training-domain slides in `slides`.
pub fn train_detector(
    cfg: &TrainConfig,
    slides: &[&Slide],
    transfer: Option<&dyn StyleTransfer>,
) -> Result<DetectorOutcome> {
    train_detector_with(cfg, slides, transfer, DetectorState::new(cfg)?, |_| ControlFlow::Continue(()))
}

/// Runs iterations `state.next_iteration..cfg.iterations`, calling `callback`
/// after each; `Break` stops early. Iteration `i` draws from its own random
/// stream, so a resumed run matches an uninterrupted one.
pub fn train_detector_with(
    cfg: &TrainConfig,
    slides: &[&Slide],
    transfer: Option<&dyn StyleTransfer>,
    mut state: DetectorState,
    mut callback: impl FnMut(&DetectorLosses) -> ControlFlow<()>,
) -> Result<DetectorOutcome> {
    cfg.validate()?;
    if cfg.style_prob > 0.0 && transfer.is_none() {
        return Err(Error::Config(format!(
            "style_prob is {} but no transfer module was given; train the transfer module first or set style_prob = 0",
            cfg.style_prob
        )));
    }
    let sampler = PatchSampler::new(slides, cfg.patch_size)?;
    if !cfg.background_only {
        sampler.check_foreground()?;
    }
    let mut history = Vec::with_capacity(cfg.iterations.saturating_sub(state.next_iteration));
    for it in state.next_iteration..cfg.iterations {
        let lr = lr_schedule(cfg, it)?;
        let mut rng = stream_rng(cfg.seed, it as u64 + 1);
        let batch = sample_training_batch(&sampler, cfg, &mut rng)?;
        let mut tensors = Vec::with_capacity(batch.len());
        let mut truth = Vec::with_capacity(batch.len());
        let (mut transferred, mut fg) = (0, 0);
        for s in batch {
            let (s, t) = augment(s, transfer, cfg, &mut rng)?;
            transferred += t as usize;
            fg += s.foreground as usize;
            tensors.push(s.patch.to_tensor());
            truth.push(s.boxes);
        }
        let x = Tensor::stack(&tensors);
        let det = &mut state.detector;
        let loss = det.loss_gradients(&x, &truth)?;
        let grad_norm = det.grad_norm();
        if !grad_norm.is_finite() || !loss.total.is_finite() {
            return Err(Error::Config(format!("detector training diverged at iteration {it}")));
        }
        if cfg.clip_grad_norm > 0.0 && grad_norm > cfg.clip_grad_norm {
            det.scale_grads((cfg.clip_grad_norm / grad_norm) as f32);
        }
        state.optimizer.step(det, lr);
        state.next_iteration = it + 1;
        let row = DetectorLosses {
            iteration: it,
            lr,
            cls: loss.cls,
            reg: loss.reg,
            total: loss.total,
            foreground_anchors: loss.foreground,
            foreground_patches: fg,
            transferred,
            grad_norm,
        };
        let flow = callback(&row);
        history.push(row);
        if flow.is_break() {
            break;
        }
    }
    Ok(DetectorOutcome { state, history })
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::patch::Patch;
    use crate::style::{ScannerDomain, StyleCode};
    use crate::synth::generate_slide;

    fn slides() -> Vec<Slide> {
        ScannerDomain::TRAINING
            .iter()
            .map(|&s| generate_slide(70 + s.id() as u64, s, 320, 4, 20).unwrap())
            .collect()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            iterations: 5,
            batch_size: 2,
            patch_size: 64,
            style_prob: 0.0,
            lr_start: 0.01,
            ..Default::default()
        }
    }

    struct Counting(Cell<usize>);
    impl StyleTransfer for Counting {
        fn restyle(&self, patch: &Patch, _: &StyleCode) -> Result<Patch> {
            self.0.set(self.0.get() + 1);
            Ok(patch.clone())
        }
    }

    #[test]
    fn history_is_complete_and_bypass_never_calls_transfer() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let g = Counting(Cell::new(0));
        let out = train_detector(&tiny(), &refs, Some(&g)).unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(out.history.iter().all(|h| h.total.is_finite()));
        assert_eq!(g.0.get(), 0);

        let cfg = TrainConfig { style_prob: 1.0, iterations: 2, ..tiny() };
        let out = train_detector(&cfg, &refs, Some(&g)).unwrap();
        assert_eq!(g.0.get(), 4);
        assert!(out.history.iter().all(|h| h.transferred == 2));
    }

    #[test]
    fn style_without_transfer_module_is_rejected() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let cfg = TrainConfig { style_prob: 0.2, ..tiny() };
        match train_detector(&cfg, &refs, None) {
            Err(Error::Config(m)) => assert!(m.contains("transfer module first")),
            other => panic!("unexpected {:?}", other.map(|o| o.history.len())),
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let cfg = tiny();
        let full = train_detector(&cfg, &refs, None).unwrap();
        let stop = |h: &DetectorLosses| {
            if h.iteration == 1 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let head = train_detector_with(&cfg, &refs, None, DetectorState::new(&cfg).unwrap(), stop).unwrap();
        assert_eq!(head.history.len(), 2);
        assert_eq!(head.state.next_iteration, 2);
        let tail = train_detector_with(&cfg, &refs, None, head.state, |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(tail.history[0].iteration, 2);
        let joined: Vec<_> = head.history.into_iter().chain(tail.history).collect();
        assert_eq!(joined, full.history);
        assert_eq!(tail.state.detector, full.state.detector);
    }

    #[test]
    fn identical_seeds_give_identical_first_loss() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let cfg = TrainConfig { iterations: 1, ..tiny() };
        let a = train_detector(&cfg, &refs, None).unwrap();
        let b = train_detector(&cfg, &refs, None).unwrap();
        assert_eq!(a.history[0].total.to_bits(), b.history[0].total.to_bits());
    }
}
