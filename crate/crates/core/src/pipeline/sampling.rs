use rand::Rng;

use super::TrainConfig;
use crate::geometry::GroundTruthBox;
use crate::patch::Patch;
use crate::style::{StyleCode, NUM_DOMAINS};
use crate::synth::Slide;
use crate::transfer::Generator;
use crate::{Error, Result};

/// Minimum distance of a foreground patch's chosen figure from the patch
/// border, and clearance of background patches from any figure.
pub const FIGURE_MARGIN: usize = 25;
const BACKGROUND_ATTEMPTS: usize = 200;

/// Patch with its ground truth in patch coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub patch: Patch,
    pub boxes: Vec<GroundTruthBox>,
    pub foreground: bool,
}

/// Draws training patches: domains uniformly, foreground with probability
/// `1 / (1 + bg_fg_ratio)`.
pub struct PatchSampler<'a> {
    slides: Vec<Vec<&'a Slide>>,
    /// `(slide index within domain, mitosis index)`
    figures: Vec<Vec<(usize, usize)>>,
    size: usize,
}

impl<'a> PatchSampler<'a> {
    /// Uses the training-domain slides in `slides`; slides of the held-out
    /// domain are ignored.
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
        let figures = by_domain
            .iter()
            .map(|slides| {
                slides
                    .iter()
                    .enumerate()
                    .flat_map(|(i, s)| (0..s.mitoses.len()).map(move |m| (i, m)))
                    .collect()
            })
            .collect();
        Ok(Self {
            slides: by_domain,
            figures,
            size,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.size
    }

    /// Errors if foreground sampling is requested but some domain has no figures.
    pub fn check_foreground(&self) -> Result<()> {
        match self.figures.iter().position(|f| f.is_empty()) {
            Some(d) => Err(Error::InsufficientForeground(d as u8)),
            None => Ok(()),
        }
    }

    fn cut(&self, slide: &Slide, x: usize, y: usize) -> Sample {
        let patch = Patch::crop(&slide.image, &slide.slide_id, slide.scanner, x, y, self.size).expect("inside slide");
        let (x0, y0, s) = (x as f64, y as f64, self.size as f64);
        let boxes: Vec<GroundTruthBox> = slide
            .mitoses
            .iter()
            .filter(|m| m.x >= x0 && m.x < x0 + s && m.y >= y0 && m.y < y0 + s)
            .map(|m| GroundTruthBox::new(m.x - x0, m.y - y0))
            .collect();
        let foreground = !boxes.is_empty();
        Sample { patch, boxes, foreground }
    }

    /// Patch containing figure `m` of `slide` at least `FIGURE_MARGIN` px
    /// inside its border.
    pub fn foreground_at(&self, slide: &Slide, m: usize, rng: &mut impl Rng) -> Sample {
        let fig = slide.mitoses[m];
        let range = |c: f64, extent: usize| {
            let hi_img = extent - self.size;
            let lo = (c.ceil() as usize + FIGURE_MARGIN).saturating_sub(self.size).min(hi_img);
            let hi = (c.floor() as usize).saturating_sub(FIGURE_MARGIN).min(hi_img);
            (lo, hi.max(lo))
        };
        let (xl, xh) = range(fig.x, slide.image.width);
        let (yl, yh) = range(fig.y, slide.image.height);
        let x = rng.random_range(xl..=xh);
        let y = rng.random_range(yl..=yh);
        self.cut(slide, x, y)
    }

    /// Patch with no figure centre within `FIGURE_MARGIN` px of it.
    pub fn background(&self, domain: usize, rng: &mut impl Rng) -> Result<Sample> {
        let slides = &self.slides[domain];
        let m = FIGURE_MARGIN as f64;
        for _ in 0..BACKGROUND_ATTEMPTS {
            let s = slides[rng.random_range(0..slides.len())];
            let x = rng.random_range(0..=s.image.width - self.size);
            let y = rng.random_range(0..=s.image.height - self.size);
            let (x0, y0, sz) = (x as f64, y as f64, self.size as f64);
            let clear = s
                .mitoses
                .iter()
                .all(|f| f.x < x0 - m || f.x >= x0 + sz + m || f.y < y0 - m || f.y >= y0 + sz + m);
            if clear {
                return Ok(self.cut(s, x, y));
            }
        }
        Err(Error::InsufficientBackground(domain as u8))
    }

    pub fn sample(&self, fg_prob: f64, rng: &mut impl Rng) -> Result<Sample> {
        let domain = rng.random_range(0..NUM_DOMAINS);
        if rng.random_bool(fg_prob) {
            let figs = &self.figures[domain];
            if figs.is_empty() {
                return Err(Error::InsufficientForeground(domain as u8));
            }
            let (si, m) = figs[rng.random_range(0..figs.len())];
            Ok(self.foreground_at(self.slides[domain][si], m, rng))
        } else {
            self.background(domain, rng)
        }
    }
}

/// One training batch; deterministic given the state of `rng`.
pub fn sample_training_batch(sampler: &PatchSampler, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<Sample>> {
    let p = cfg.foreground_prob();
    (0..cfg.batch_size).map(|_| sampler.sample(p, rng)).collect()
}

/// Anything that can restyle a patch towards a style code.
pub trait StyleTransfer {
    fn restyle(&self, patch: &Patch, code: &StyleCode) -> Result<Patch>;
}

impl StyleTransfer for Generator<f32> {
    fn restyle(&self, patch: &Patch, code: &StyleCode) -> Result<Patch> {
        self.transfer_patch(patch, code)
    }
}

/// With probability `p`, restyles `patch` towards a random style code;
/// otherwise returns it unchanged. The Bernoulli draw always happens, the
/// code draw only on transfer. Returns whether the patch was restyled.
pub fn maybe_style_transfer(
    patch: &Patch,
    transfer: Option<&dyn StyleTransfer>,
    p: f64,
    rng: &mut impl Rng,
) -> Result<(Patch, bool)> {
    if !rng.random_bool(p) {
        return Ok((patch.clone(), false));
    }
    let code = StyleCode::sample(rng);
    let g = transfer.ok_or_else(|| Error::Config("style transfer requested without a transfer module".into()))?;
    let mut out = g.restyle(patch, &code)?;
    out.scanner = patch.scanner;
    Ok((out, true))
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::style::ScannerDomain;
    use crate::synth::generate_slide;

    fn slides() -> Vec<Slide> {
        ScannerDomain::ALL
            .iter()
            .map(|&s| generate_slide(40 + s.id() as u64, s, 512, 4, 30).unwrap())
            .collect()
    }

    #[test]
    fn foreground_and_background_contracts() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let sampler = PatchSampler::new(&refs, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let s = sampler.sample(0.5, &mut rng).unwrap();
            assert!(s.patch.scanner.is_training());
            assert_eq!(s.foreground, !s.boxes.is_empty());
            if s.foreground {
                assert!(s.boxes.iter().any(|b| {
                    let m = FIGURE_MARGIN as f64;
                    b.x >= m && b.x <= 128.0 - m && b.y >= m && b.y <= 128.0 - m
                }));
            }
            for b in &s.boxes {
                assert!(b.x >= 0.0 && b.x < 128.0 && b.y >= 0.0 && b.y < 128.0);
            }
        }
    }

    #[test]
    fn background_only_has_no_figures() {
        let all = slides();
        let refs: Vec<&Slide> = all.iter().collect();
        let sampler = PatchSampler::new(&refs, 128).unwrap();
        let cfg = TrainConfig { background_only: true, batch_size: 50, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = sample_training_batch(&sampler, &cfg, &mut rng).unwrap();
        assert!(batch.iter().all(|s| !s.foreground));
    }

    #[test]
    fn empty_domain_is_reported() {
        let mut all = slides();
        all[1].mitoses.clear();
        let refs: Vec<&Slide> = all.iter().collect();
        let sampler = PatchSampler::new(&refs, 128).unwrap();
        assert!(matches!(sampler.check_foreground(), Err(Error::InsufficientForeground(1))));
        let refs: Vec<&Slide> = all.iter().filter(|s| s.scanner.id() != 0).collect();
        assert!(matches!(PatchSampler::new(&refs, 128), Err(Error::InsufficientDomains(_))));
    }

    struct Counting(Cell<usize>);
    impl StyleTransfer for Counting {
        fn restyle(&self, patch: &Patch, _: &StyleCode) -> Result<Patch> {
            self.0.set(self.0.get() + 1);
            Ok(patch.clone())
        }
    }

    #[test]
    fn degenerate_probabilities() {
        let all = slides();
        let patch = Patch::crop(&all[0].image, "a", all[0].scanner, 0, 0, 64).unwrap();
        let g = Counting(Cell::new(0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(!maybe_style_transfer(&patch, Some(&g), 0.0, &mut rng).unwrap().1);
        }
        assert_eq!(g.0.get(), 0);
        for _ in 0..100 {
            assert!(maybe_style_transfer(&patch, Some(&g), 1.0, &mut rng).unwrap().1);
        }
        assert_eq!(g.0.get(), 100);
        assert!(maybe_style_transfer(&patch, None, 0.0, &mut rng).is_ok());
        assert!(maybe_style_transfer(&patch, None, 1.0, &mut rng).is_err());
    }
}
