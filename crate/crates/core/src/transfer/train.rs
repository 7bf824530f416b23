use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, interpolate, penalty_from_gradient, total_losses, Critic, LossPieces};
use super::model::{Discriminator, Generator};
use super::TransferConfig;
use crate::nn::{Adam, Module, Real, Tensor};
use crate::patch::Patch;
use crate::seed::stream_rng;
use crate::style::{ScannerDomain, StyleCode, NUM_DOMAINS};
use crate::synth::Slide;
use crate::{Error, Result};

/// Losses of one training iteration. Generator entries repeat the most
/// recent generator update on iterations that only train the critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferLosses {
    pub iteration: usize,
    pub d_adv: f64,
    pub d_cls: f64,
    pub gp: f64,
    pub d_total: f64,
    pub g_adv: f64,
    pub g_cls: f64,
    pub rec: f64,
    pub g_total: f64,
}

pub(crate) fn one_hots(domains: &[usize]) -> Vec<StyleCode> {
    domains
        .iter()
        .map(|&d| StyleCode::one_hot(ScannerDomain::new(d as u8).expect("training domain")).expect("one-hot"))
        .collect()
}

fn mean<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|s| s.f64()).sum::<f64>() / v.len().max(1) as f64
}

/// Accumulates the critic objective's parameter gradients into `d` (after
/// zeroing them) and returns its pieces.
///
/// The penalty depends on the critic's input gradient; its parameter
/// gradient comes from [`Discriminator::accumulate_directional`].
pub fn critic_gradients<T: Real>(
    d: &mut Discriminator<T>,
    real: &Tensor<T>,
    real_domains: &[usize],
    fake: &Tensor<T>,
    eps: &[f64],
    cfg: &TransferConfig,
) -> LossPieces {
    let n = real.n();
    let b = n as f64;
    let mut penalty = None;
    if cfg.lambda_gp > 0.0 {
        let mixed = interpolate(real, fake, eps);
        let grad = d.score_gradient(&mixed);
        penalty = Some((mixed, grad));
    }
    d.zero_grad();

    let (cr, tr) = d.forward(real);
    let (cf, tf) = d.forward(fake);
    let adv = mean(&cr.scores) - mean(&cf.scores);
    let (cls_real, mut dlog) = cross_entropy(&cr.logits, real_domains);
    dlog.iter_mut().for_each(|g| *g *= T::of(cfg.lambda_cls));
    d.backward(&tr, &vec![T::of(-1.0 / b); n], Some(&dlog), false);
    d.backward(&tf, &vec![T::of(1.0 / b); n], None, false);

    let mut gradient_penalty = 0.0;
    if let Some((mixed, grad)) = penalty {
        let (gp, norms) = penalty_from_gradient(&grad);
        gradient_penalty = gp;
        let mut u = grad;
        let mut w = vec![T::zero(); n];
        for i in 0..n {
            let k = if norms[i] > 0.0 { 1.0 / norms[i] } else { 0.0 };
            w[i] = T::of(cfg.lambda_gp * 2.0 * (norms[i] - 1.0) / b);
            u.sample_mut(i).iter_mut().for_each(|v| *v *= T::of(k));
        }
        d.accumulate_directional(&mixed, &u, &w);
    }
    LossPieces {
        adv,
        cls_real,
        gradient_penalty,
        ..Default::default()
    }
}

/// Accumulates the generator objective's parameter gradients into `g` (after
/// zeroing them) and returns its pieces. `d` is left with zero gradients.
pub fn generator_gradients<T: Real>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    real: &Tensor<T>,
    source_domains: &[usize],
    target_domains: &[usize],
    cfg: &TransferConfig,
) -> Result<LossPieces> {
    let n = real.n();
    let b = n as f64;
    g.zero_grad();
    let (fake, t_fake) = g.forward(real, &one_hots(target_domains))?;
    let real_scores = d.infer(real).scores;
    let (cf, tf) = d.forward(&fake);
    let adv = mean(&real_scores) - mean(&cf.scores);
    let (cls_fake, mut dlog) = cross_entropy(&cf.logits, target_domains);
    dlog.iter_mut().for_each(|v| *v *= T::of(cfg.lambda_cls));

    let (recon, t_rec) = g.forward(&fake, &one_hots(source_domains))?;
    let rec = real.mean_abs_diff(&recon);
    let k = T::of(cfg.lambda_rec / recon.data().len() as f64);
    let mut drec = recon.clone();
    for (v, &x) in drec.data_mut().iter_mut().zip(real.data()) {
        let diff = *v - x;
        *v = if diff > T::zero() {
            k
        } else if diff < T::zero() {
            -k
        } else {
            T::zero()
        };
    }
    let mut dfake = g.backward(&t_rec, drec, true).expect("reconstruction dx");
    let dadv = d
        .backward(&tf, &vec![T::of(-1.0 / b); n], Some(&dlog), true)
        .expect("critic dx");
    dfake.add_assign(&dadv);
    g.backward(&t_fake, dfake, false);
    d.zero_grad();
    Ok(LossPieces {
        adv,
        cls_fake,
        rec,
        ..Default::default()
    })
}

/// Random crops of the four training domains.
pub struct DomainPatches<'a> {
    by_domain: Vec<Vec<&'a Slide>>,
    size: usize,
}

impl<'a> DomainPatches<'a> {
    /// Keeps the slides of training domains; errors if one is missing or no
    /// slide is large enough for a patch.
    pub fn new(slides: &[&'a Slide], size: usize) -> Result<Self> {
        let mut by_domain = vec![Vec::new(); NUM_DOMAINS];
        for s in slides {
            if s.scanner.is_training() && s.image.width >= size && s.image.height >= size {
                by_domain[s.scanner.index()].push(*s);
            }
        }
        let missing: Vec<u8> = (0..NUM_DOMAINS as u8).filter(|&d| by_domain[d as usize].is_empty()).collect();
        if !missing.is_empty() {
            return Err(Error::InsufficientDomains(missing));
        }
        Ok(Self { by_domain, size })
    }

    pub fn crop(&self, domain: usize, rng: &mut impl Rng) -> Patch {
        let slides = &self.by_domain[domain];
        let s = slides[rng.random_range(0..slides.len())];
        let x = rng.random_range(0..=s.image.width - self.size);
        let y = rng.random_range(0..=s.image.height - self.size);
        Patch::crop(&s.image, &s.slide_id, s.scanner, x, y, self.size).expect("crop inside slide")
    }

    /// `n` patches with uniformly drawn domains.
    pub fn batch(&self, n: usize, rng: &mut impl Rng) -> (Tensor<f32>, Vec<usize>) {
        let mut parts = Vec::with_capacity(n);
        let mut domains = Vec::with_capacity(n);
        for _ in 0..n {
            let d = rng.random_range(0..NUM_DOMAINS);
            parts.push(self.crop(d, rng).to_tensor());
            domains.push(d);
        }
        (Tensor::stack(&parts), domains)
    }
}

/// Models, optimizers and progress of a transfer run.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferState {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub next_iteration: usize,
    /// Generator losses of the latest generator update, repeated in the
    /// history until the next one.
    pub last_g: LossPieces,
}

impl TransferState {
    pub fn new(cfg: &TransferConfig) -> Result<Self> {
        let (generator, discriminator) = init_models(cfg)?;
        Ok(Self {
            generator,
            discriminator,
            opt_g: Adam::new(cfg.lr_g, cfg.beta1, cfg.beta2),
            opt_d: Adam::new(cfg.lr_d, cfg.beta1, cfg.beta2),
            next_iteration: 0,
            last_g: LossPieces::default(),
        })
    }
}

pub struct TransferOutcome {
    pub state: TransferState,
    pub history: Vec<TransferLosses>,
}

pub fn init_models(cfg: &TransferConfig) -> Result<(Generator<f32>, Discriminator<f32>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = Generator::new(cfg.g_channels, cfg.g_res_blocks, &mut rng);
    g.zero_final_layer();
    let d = Discriminator::new(cfg.patch_size, cfg.d_channels, cfg.d_downsamples, &mut rng)?;
    Ok((g, d))
}

/// Trains the transfer module on crops of the training-domain slides in
/// `slides`; slides of the held-out domain are ignored. Target domains are
/// drawn uniformly and passed as one-hot codes.
pub fn train_transfer(cfg: &TransferConfig, slides: &[&Slide]) -> Result<TransferOutcome> {
    train_transfer_with(cfg, slides, TransferState::new(cfg)?, |_| ControlFlow::Continue(()))
}

/// Runs iterations `state.next_iteration..cfg.iterations`, calling `callback`
/// after each; `Break` stops early. Each iteration draws from its own random
/// stream, so a resumed run matches an uninterrupted one.
pub fn train_transfer_with(
    cfg: &TransferConfig,
    slides: &[&Slide],
    mut state: TransferState,
    mut callback: impl FnMut(&TransferLosses) -> ControlFlow<()>,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    let data = DomainPatches::new(slides, cfg.patch_size)?;
    let mut history = Vec::with_capacity(cfg.iterations.saturating_sub(state.next_iteration));
    for it in state.next_iteration..cfg.iterations {
        let mut rng = stream_rng(cfg.seed, it as u64 + 1);
        let (real, sources) = data.batch(cfg.batch_size, &mut rng);
        let targets: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..NUM_DOMAINS)).collect();
        let eps: Vec<f64> = (0..cfg.batch_size).map(|_| rng.random::<f64>()).collect();

        let (g, d) = (&mut state.generator, &mut state.discriminator);
        let fake = g.translate(&real, &one_hots(&targets))?;
        let dp = critic_gradients(d, &real, &sources, &fake, &eps, cfg);
        state.opt_d.step(d);

        if it % cfg.n_critic == 0 {
            state.last_g = generator_gradients(g, d, &real, &sources, &targets, cfg)?;
            state.opt_g.step(g);
        }
        let lg = state.last_g;
        let (d_total, _) = total_losses(cfg, &dp);
        let (_, g_total) = total_losses(cfg, &lg);
        let entry = TransferLosses {
            iteration: it,
            d_adv: dp.adv,
            d_cls: dp.cls_real,
            gp: dp.gradient_penalty,
            d_total,
            g_adv: lg.adv,
            g_cls: lg.cls_fake,
            rec: lg.rec,
            g_total,
        };
        if !d_total.is_finite() || !g_total.is_finite() {
            return Err(Error::Config(format!("transfer training diverged at iteration {it}")));
        }
        state.next_iteration = it + 1;
        let flow = callback(&entry);
        history.push(entry);
        if flow.is_break() {
            break;
        }
    }
    Ok(TransferOutcome { state, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_slide;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> TransferConfig {
        TransferConfig {
            iterations: 3,
            batch_size: 2,
            n_critic: 2,
            patch_size: 16,
            g_channels: 2,
            g_res_blocks: 1,
            d_channels: 2,
            d_downsamples: 2,
            seed: 11,
            ..Default::default()
        }
    }

    fn slides() -> Vec<Slide> {
        ScannerDomain::TRAINING
            .iter()
            .map(|&s| generate_slide(5, s, 128, 1, 10).unwrap())
            .collect()
    }

    fn rand_batch(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..n * 3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec([n, 3, size, size], data)
    }

    /// Worst relative error of `grads` against central differences of `f`
    /// on `count` random coordinates of `params`.
    fn check(params: &[f64], grads: &[f64], count: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for _ in 0..count {
            let i = rng.random_range(0..params.len());
            let mut p = params.to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let num = (up - down) / (2.0 * h);
            // Biases feeding a normalization have an exact zero gradient;
            // the floor keeps difference noise there from counting as error.
            let err = (num - grads[i]).abs() / (num.abs() + grads[i].abs()).max(1e-5);
            worst = worst.max(err);
        }
        worst
    }

    fn small_models(cfg: &TransferConfig, seed: u64) -> (Generator<f64>, Discriminator<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Generator::new(cfg.g_channels, cfg.g_res_blocks, &mut rng);
        let d = Discriminator::new(cfg.patch_size, cfg.d_channels, cfg.d_downsamples, &mut rng).unwrap();
        (g, d)
    }

    fn grad_cfg(lambda_gp: f64) -> TransferConfig {
        TransferConfig {
            patch_size: 8,
            g_channels: 2,
            g_res_blocks: 1,
            d_channels: 3,
            d_downsamples: 2,
            lambda_gp,
            ..Default::default()
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        for lambda_gp in [0.0, 10.0] {
            let cfg = grad_cfg(lambda_gp);
            let (_, mut d) = small_models(&cfg, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let real = rand_batch(3, 8, &mut rng);
            let fake = rand_batch(3, 8, &mut rng);
            let eps = [0.2, 0.5, 0.9];
            let domains = [0, 2, 3];
            critic_gradients(&mut d, &real, &domains, &fake, &eps, &cfg);
            let grads = d.flat_grads();
            let loss = |p: &[f64]| {
                let mut dd = d.clone();
                dd.load_flat(p);
                let cr = dd.infer(&real);
                let cf = dd.infer(&fake);
                let adv = mean(&cr.scores) - mean(&cf.scores);
                let cls = cross_entropy(&cr.logits, &domains).0;
                let gp = penalty_from_gradient(&dd.score_gradient(&interpolate(&real, &fake, &eps))).0;
                -adv + cfg.lambda_cls * cls + cfg.lambda_gp * gp
            };
            let err = check(&d.flat_params(), &grads, 40, 3, loss);
            assert!(err < 1e-3, "lambda_gp {lambda_gp}: relative error {err}");
        }
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let cfg = grad_cfg(10.0);
        let (mut g, mut d) = small_models(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = rand_batch(2, 8, &mut rng);
        let (src, tgt) = ([1, 3], [2, 0]);
        generator_gradients(&mut g, &mut d, &real, &src, &tgt, &cfg).unwrap();
        assert!(d.flat_grads().iter().all(|&v| v == 0.0));
        let grads = g.flat_grads();
        let loss = |p: &[f64]| {
            let mut gg = g.clone();
            gg.load_flat(p);
            let fake = gg.translate(&real, &one_hots(&tgt)).unwrap();
            let back = gg.translate(&fake, &one_hots(&src)).unwrap();
            let cf = d.infer(&fake);
            let adv = mean(&d.infer(&real).scores) - mean(&cf.scores);
            adv + cfg.lambda_cls * cross_entropy(&cf.logits, &tgt).0 + cfg.lambda_rec * real.mean_abs_diff(&back)
        };
        let err = check(&g.flat_params(), &grads, 40, 6, loss);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn missing_domain_is_reported() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().filter(|s| s.scanner.id() != 2).collect();
        assert!(matches!(
            train_transfer(&tiny_cfg(), &refs),
            Err(Error::InsufficientDomains(d)) if d == vec![2]
        ));
    }

    #[test]
    fn history_length_and_determinism() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let a = train_transfer(&tiny_cfg(), &refs).unwrap();
        assert_eq!(a.history.len(), 3);
        for h in &a.history {
            for v in [h.d_adv, h.d_cls, h.gp, h.d_total, h.g_adv, h.g_cls, h.rec, h.g_total] {
                assert!(v.is_finite());
            }
        }
        let b = train_transfer(&tiny_cfg(), &refs).unwrap();
        assert_eq!(a.history[0], b.history[0]);
        assert_eq!(a.state.generator, b.state.generator);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let cfg = TransferConfig { iterations: 5, ..tiny_cfg() };
        let full = train_transfer(&cfg, &refs).unwrap();
        let stop = |h: &TransferLosses| {
            if h.iteration == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let head = train_transfer_with(&cfg, &refs, TransferState::new(&cfg).unwrap(), stop).unwrap();
        assert_eq!(head.state.next_iteration, 3);
        let tail = train_transfer_with(&cfg, &refs, head.state, |_| ControlFlow::Continue(())).unwrap();
        let joined: Vec<_> = head.history.into_iter().chain(tail.history).collect();
        assert_eq!(joined, full.history);
        assert_eq!(tail.state, full.state);
    }
}
