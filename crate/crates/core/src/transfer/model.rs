use rand::Rng;

use crate::nn::{Conv2d, GroupNorm, Layer, Module, Param, Real, Seq, SeqTrace, Tensor};
use crate::patch::Patch;
use crate::style::{StyleCode, NUM_DOMAINS};
use crate::{Error, Result};

/// Encoder, residual bottleneck and decoder conditioned on a style code that
/// is broadcast as constant input planes.
///
/// The decoder predicts a change in pre-activation space: the output is
/// `tanh(net(x, c) + atanh(SKIP_GAIN · x))`, so a zero final layer is
/// (almost) the identity and every output stays inside `(-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub net: Seq<T>,
    /// Output convolution over the decoder features and the code planes.
    pub head: Conv2d<T>,
    /// Per-pixel colour branch on the image, the code planes and per-image
    /// channel statistics, added to the head's output.
    pub pixel: Seq<T>,
}

pub struct GeneratorTrace<T> {
    seq: SeqTrace<T>,
    pixel: SeqTrace<T>,
    head_in: Tensor<T>,
    x: Tensor<T>,
    y: Tensor<T>,
}

/// Input scaling in front of `atanh` on the skip path, keeping it finite at
/// `|x| = 1`.
pub const SKIP_GAIN: f64 = 0.995;

const PIXEL_HIDDEN: usize = 16;

/// Channel means followed by channel mean squares.
const STATS: usize = 6;

fn conv<T: Real>(i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> Layer<T> {
    Layer::Conv(Conv2d::new(i, o, k, s, p, rng))
}

/// Normalizes over all channels jointly. Per-channel (instance) statistics
/// would subtract away both the constant code planes and the colour cast
/// that tells domains apart.
fn norm<T: Real>(c: usize) -> Layer<T> {
    Layer::Norm(GroupNorm::new(c, 1))
}

impl<T: Real> Generator<T> {
    pub fn new(channels: usize, res_blocks: usize, rng: &mut impl Rng) -> Self {
        let c = channels;
        let mut layers = vec![
            conv(3 + NUM_DOMAINS, c, 3, 1, 1, rng),
            norm(c),
            Layer::LeakyRelu(0.0),
            conv(c, 2 * c, 4, 2, 1, rng),
            norm(2 * c),
            Layer::LeakyRelu(0.0),
            conv(2 * c, 4 * c, 4, 2, 1, rng),
            norm(4 * c),
            Layer::LeakyRelu(0.0),
        ];
        for _ in 0..res_blocks {
            layers.push(Layer::Residual(Seq::new(vec![
                conv(4 * c, 4 * c, 3, 1, 1, rng),
                norm(4 * c),
                Layer::LeakyRelu(0.0),
                conv(4 * c, 4 * c, 3, 1, 1, rng),
                norm(4 * c),
            ])));
        }
        layers.extend([
            Layer::Upsample2x,
            conv(4 * c, 2 * c, 3, 1, 1, rng),
            norm(2 * c),
            Layer::LeakyRelu(0.0),
            Layer::Upsample2x,
            conv(2 * c, c, 3, 1, 1, rng),
            norm(c),
            Layer::LeakyRelu(0.0),
        ]);
        Self {
            net: Seq::new(layers),
            head: Conv2d::new(c + NUM_DOMAINS, 3, 3, 1, 1, rng),
            pixel: Seq::new(vec![
                conv(3 + NUM_DOMAINS + STATS, PIXEL_HIDDEN, 1, 1, 0, rng),
                Layer::LeakyRelu(0.0),
                conv(PIXEL_HIDDEN, 3, 1, 1, 0, rng),
            ]),
        }
    }

    /// Zeroes both output convolutions so the generator passes its input
    /// through, up to `SKIP_GAIN`.
    pub fn zero_final_layer(&mut self) {
        self.head.weight.value.fill(T::zero());
        self.head.bias.value.fill(T::zero());
        if let Some(Layer::Conv(c)) = self.pixel.layers.last_mut() {
            c.weight.value.fill(T::zero());
            c.bias.value.fill(T::zero());
        }
    }

    fn input(x: &Tensor<T>, codes: &[StyleCode]) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if c != 3 || h != w || h % 4 != 0 || h == 0 {
            return Err(Error::Shape(format!(
                "generator expects square 3-channel input with side divisible by 4, got {:?}",
                x.shape()
            )));
        }
        if codes.len() != n {
            return Err(Error::Shape(format!("{} style codes for a batch of {n}", codes.len())));
        }
        let mut planes = Tensor::zeros([n, NUM_DOMAINS, h, w]);
        for (i, code) in codes.iter().enumerate() {
            let s = planes.sample_mut(i);
            for (k, &v) in code.weights().iter().enumerate() {
                s[k * h * w..(k + 1) * h * w].fill(T::of(v));
            }
        }
        Ok(Tensor::concat_channels(x, &planes))
    }

    fn output(x: &Tensor<T>, mut pre: Tensor<T>) -> Tensor<T> {
        let k = T::of(SKIP_GAIN);
        for (p, &v) in pre.data_mut().iter_mut().zip(x.data()) {
            *p = (*p + (k * v).atanh()).tanh();
        }
        pre
    }

    /// Appends the per-image mean and mean square of each colour channel as
    /// constant planes. These tell the pixel branch which scanner the patch
    /// came from.
    fn pixel_input(x: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let mut stats = Tensor::zeros([n, STATS, h, w]);
        for i in 0..n {
            let xs = x.sample(i);
            let ss = stats.sample_mut(i);
            for ch in 0..3 {
                let plane = &xs[ch * hw..(ch + 1) * hw];
                let m = plane.iter().copied().sum::<T>() * inv;
                let q = plane.iter().map(|&v| v * v).sum::<T>() * inv;
                ss[ch * hw..(ch + 1) * hw].fill(m);
                ss[(3 + ch) * hw..(4 + ch) * hw].fill(q);
            }
        }
        Tensor::concat_channels(input, &stats)
    }

    /// Gradient of the pixel-branch input with respect to the image.
    fn pixel_input_backward(x: &Tensor<T>, d: &Tensor<T>) -> Tensor<T> {
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let two = T::of(2.0);
        let (dimg, rest) = d.split_channels(3);
        let dstats = rest.split_channels(NUM_DOMAINS).1;
        let mut dx = dimg;
        for i in 0..n {
            let xs = x.sample(i);
            let ds = dstats.sample(i);
            let plane_sum = |k: usize| ds[k * hw..(k + 1) * hw].iter().copied().sum::<T>() * inv;
            let sums: Vec<T> = (0..STATS).map(plane_sum).collect();
            let dxs = dx.sample_mut(i);
            for ch in 0..3 {
                for p in 0..hw {
                    let v = xs[ch * hw + p];
                    dxs[ch * hw + p] += sums[ch] + sums[3 + ch] * two * v;
                }
            }
        }
        dx
    }

    fn head_input(feat: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
        Tensor::concat_channels(feat, &input.split_channels(3).1)
    }

    pub fn translate(&self, x: &Tensor<T>, codes: &[StyleCode]) -> Result<Tensor<T>> {
        let input = Self::input(x, codes)?;
        let feat = self.net.infer(input.clone());
        let mut pre = self.head.forward(&Self::head_input(&feat, &input));
        pre.add_assign(&self.pixel.infer(Self::pixel_input(x, &input)));
        Ok(Self::output(x, pre))
    }

    pub fn forward(&self, x: &Tensor<T>, codes: &[StyleCode]) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        let input = Self::input(x, codes)?;
        let (feat, seq) = self.net.forward(input.clone());
        let head_in = Self::head_input(&feat, &input);
        let pixel_in = Self::pixel_input(x, &input);
        let (px, pixel) = self.pixel.forward(pixel_in);
        let mut pre = self.head.forward(&head_in);
        pre.add_assign(&px);
        let y = Self::output(x, pre);
        Ok((
            y.clone(),
            GeneratorTrace {
                seq,
                pixel,
                head_in,
                x: x.clone(),
                y,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the image channels of the input.
    pub fn backward(&mut self, trace: &GeneratorTrace<T>, mut dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        for (d, &y) in dy.data_mut().iter_mut().zip(trace.y.data()) {
            *d = *d * (T::one() - y * y);
        }
        let dfeat = self.head.backward(&trace.head_in, &dy, true).expect("head input gradient");
        let dfeat = dfeat.split_channels(self.net_channels()).0;
        let dpix = self.pixel.backward(&trace.pixel, dy.clone(), need_dx);
        let dpre = dy;
        let dx = self.net.backward(&trace.seq, dfeat, need_dx)?;
        let mut dx = dx.split_channels(3).0;
        dx.add_assign(&Self::pixel_input_backward(&trace.x, &dpix?));
        let k = T::of(SKIP_GAIN);
        for ((g, &d), &v) in dx.data_mut().iter_mut().zip(dpre.data()).zip(trace.x.data()) {
            let u = k * v;
            *g = *g + d * k / (T::one() - u * u);
        }
        Some(dx)
    }
}

impl<T: Real> Generator<T> {
    fn net_channels(&self) -> usize {
        self.head.in_ch - NUM_DOMAINS
    }
}

impl Generator<f32> {
    /// Restyles one patch towards `code`.
    pub fn transfer_patch(&self, patch: &Patch, code: &StyleCode) -> Result<Patch> {
        let y = self.translate(&patch.to_tensor(), std::slice::from_ref(code))?;
        patch.with_pixels(&y, 0)
    }
}

impl<T: Real> Module<T> for Generator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.net.visit(f);
        self.head.visit(f);
        self.pixel.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.net.visit_mut(f);
        self.head.visit_mut(f);
        self.pixel.visit_mut(f);
    }
}

/// Strided convolutional critic with a patch score map head and a domain
/// classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub body: Seq<T>,
    pub src: Conv2d<T>,
    pub cls: Conv2d<T>,
    pub image_size: usize,
}

pub struct DiscriminatorTrace<T> {
    body: SeqTrace<T>,
    feat: Tensor<T>,
}

/// Per-sample critic outputs: one score each and `NUM_DOMAINS` logits each.
#[derive(Clone, Debug, PartialEq)]
pub struct Critique<T> {
    pub scores: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(image_size: usize, channels: usize, downsamples: usize, rng: &mut impl Rng) -> Result<Self> {
        if downsamples == 0 || image_size % (1 << downsamples) != 0 {
            return Err(Error::Config(format!(
                "{downsamples} downsampling stages do not divide a {image_size} px input"
            )));
        }
        let mut layers = Vec::new();
        let mut ch = 3;
        for i in 0..downsamples {
            let out = channels << i;
            layers.push(conv(ch, out, 4, 2, 1, rng));
            layers.push(Layer::LeakyRelu(0.01));
            ch = out;
        }
        let last = image_size >> downsamples;
        Ok(Self {
            body: Seq::new(layers),
            src: Conv2d::new(ch, 1, 3, 1, 1, rng),
            cls: Conv2d::new(ch, NUM_DOMAINS, last, 1, 0, rng),
            image_size,
        })
    }

    fn check(&self, x: &Tensor<T>) {
        assert!(
            x.c() == 3 && x.h() == self.image_size && x.w() == self.image_size,
            "discriminator built for {} px, got {:?}",
            self.image_size,
            x.shape()
        );
    }

    fn heads(&self, feat: &Tensor<T>) -> Critique<T> {
        let map = self.src.forward(feat);
        let hw = map.h() * map.w();
        let inv = T::of(1.0 / hw as f64);
        let scores = (0..map.n()).map(|i| map.sample(i).iter().copied().sum::<T>() * inv).collect();
        let logits = self.cls.forward(feat).into_vec();
        Critique { scores, logits }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Critique<T> {
        self.check(x);
        self.heads(&self.body.infer(x.clone()))
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Critique<T>, DiscriminatorTrace<T>) {
        self.check(x);
        let (feat, body) = self.body.forward(x.clone());
        (self.heads(&feat), DiscriminatorTrace { body, feat })
    }

    /// Backpropagates score gradients `dscores` (one per sample) and optional
    /// logit gradients.
    pub fn backward(
        &mut self,
        trace: &DiscriminatorTrace<T>,
        dscores: &[T],
        dlogits: Option<&[T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let feat = &trace.feat;
        let (mh, mw) = self.src.out_size(feat.h(), feat.w());
        let inv = T::of(1.0 / (mh * mw) as f64);
        let mut dmap = Tensor::zeros([feat.n(), 1, mh, mw]);
        for (i, &g) in dscores.iter().enumerate() {
            dmap.sample_mut(i).fill(g * inv);
        }
        let mut dfeat = self.src.backward(feat, &dmap, true).expect("src head dx");
        if let Some(dl) = dlogits {
            let dl = Tensor::from_vec([feat.n(), NUM_DOMAINS, 1, 1], dl.to_vec());
            dfeat.add_assign(&self.cls.backward(feat, &dl, true).expect("cls head dx"));
        }
        self.body.backward(&trace.body, dfeat, need_dx)
    }
}

impl<T: Real> Discriminator<T> {
    /// Accumulates `Σ_i w_i ∇θ (u_i · ∇x s_i(x))` into the parameter
    /// gradients.
    ///
    /// The critic is piecewise linear in its input, so the directional
    /// derivative `u · ∇x s(x)` is the network applied to `u` with the
    /// activation pattern of `x` frozen and biases dropped. Differentiating
    /// that tangent pass gives the exact parameter gradient of any function of
    /// the input-gradient norm.
    pub fn accumulate_directional(&mut self, x: &Tensor<T>, u: &Tensor<T>, w: &[T]) {
        self.check(x);
        let saved: Vec<Vec<T>> = self.bias_grads();
        let mut a = x.clone();
        let mut t = u.clone();
        let mut inputs = Vec::new();
        let mut masks = Vec::new();
        for layer in &self.body.layers {
            match layer {
                Layer::Conv(c) => {
                    inputs.push(t.clone());
                    a = c.forward(&a);
                    t = c.forward(&t);
                    remove_bias(&mut t, &c.bias.value);
                }
                Layer::LeakyRelu(slope) => {
                    let s = T::of(*slope);
                    let mask: Vec<bool> = a.data().iter().map(|&v| v > T::zero()).collect();
                    a = a.map(|v| if v > T::zero() { v } else { v * s });
                    for (tv, &m) in t.data_mut().iter_mut().zip(&mask) {
                        if !m {
                            *tv *= s;
                        }
                    }
                    masks.push((mask, s));
                }
                _ => panic!("critic body holds only convolutions and leaky ReLUs"),
            }
        }
        let (mh, mw) = self.src.out_size(t.h(), t.w());
        let inv = T::of(1.0 / (mh * mw) as f64);
        let mut dmap = Tensor::zeros([t.n(), 1, mh, mw]);
        for (i, &g) in w.iter().enumerate() {
            dmap.sample_mut(i).fill(g * inv);
        }
        let mut dt = self.src.backward(&t, &dmap, true).expect("src head dx");
        for (idx, layer) in self.body.layers.iter_mut().enumerate().rev() {
            match layer {
                Layer::Conv(c) => {
                    let input = inputs.pop().expect("conv input");
                    match c.backward(&input, &dt, idx > 0) {
                        Some(d) => dt = d,
                        None => break,
                    }
                }
                Layer::LeakyRelu(_) => {
                    let (mask, s) = masks.pop().expect("mask");
                    for (d, m) in dt.data_mut().iter_mut().zip(mask) {
                        if !m {
                            *d *= s;
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        self.restore_bias_grads(saved);
    }

    fn bias_grads(&self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = self
            .body
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c.bias.grad.clone()),
                _ => None,
            })
            .collect();
        out.push(self.src.bias.grad.clone());
        out
    }

    fn restore_bias_grads(&mut self, mut saved: Vec<Vec<T>>) {
        self.src.bias.grad = saved.pop().expect("src bias");
        let mut it = saved.into_iter();
        for l in &mut self.body.layers {
            if let Layer::Conv(c) = l {
                c.bias.grad = it.next().expect("body bias");
            }
        }
    }
}

fn remove_bias<T: Real>(t: &mut Tensor<T>, bias: &[T]) {
    let hw = t.h() * t.w();
    for i in 0..t.n() {
        for (ch, plane) in t.sample_mut(i).chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v -= bias[ch]);
        }
    }
}

impl<T: Real> Module<T> for Discriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.body.visit(f);
        self.src.visit(f);
        self.cls.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.body.visit_mut(f);
        self.src.visit_mut(f);
        self.cls.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::style::ScannerDomain;

    fn batch(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let data = (0..n * 3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec([n, 3, size, size], data)
    }

    #[test]
    fn generator_keeps_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f32>::new(4, 1, &mut rng);
        for size in [64, 128] {
            let x = batch(1, size, &mut rng);
            let y = g.translate(&x, &[StyleCode::sample(&mut rng)]).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn generator_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Generator::<f64>::new(2, 1, &mut rng);
        let data = (0..2 * 3 * 8 * 8).map(|_| rng.random_range(-0.9..0.9)).collect();
        let x = Tensor::from_vec([2, 3, 8, 8], data);
        let codes = [StyleCode::sample(&mut rng), StyleCode::sample(&mut rng)];
        let w: Vec<f64> = (0..x.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &Tensor<f64>| -> f64 {
            let y = g.translate(x, &codes).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = g.forward(&x, &codes).unwrap();
        let dy = Tensor::from_vec(x.shape(), w.clone());
        let dx = g.clone().backward(&trace, dy, true).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let an = dx.data()[i];
            worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-6));
        }
        assert!(worst < 1e-5, "relative error {worst}");
    }

    #[test]
    fn zeroed_output_layer_passes_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Generator::<f32>::new(4, 1, &mut rng);
        g.zero_final_layer();
        let x = batch(1, 16, &mut rng);
        for d in 0..4 {
            let code = StyleCode::one_hot(ScannerDomain::new(d).unwrap()).unwrap();
            let y = g.translate(&x, &[code]).unwrap();
            let k = SKIP_GAIN as f32;
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!((a - k * b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn generator_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::<f32>::new(4, 1, &mut rng);
        let code = StyleCode::sample(&mut rng);
        let odd = Tensor::<f32>::zeros([1, 3, 18, 18]);
        assert!(matches!(g.translate(&odd, &[code]), Err(Error::Shape(_))));
        let ok = Tensor::<f32>::zeros([2, 3, 16, 16]);
        assert!(matches!(g.translate(&ok, &[code]), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Discriminator::<f32>::new(64, 4, 4, &mut rng).unwrap();
        let x = batch(3, 64, &mut rng);
        let out = d.infer(&x);
        assert_eq!(out.scores.len(), 3);
        assert_eq!(out.logits.len(), 3 * NUM_DOMAINS);
        assert!(Discriminator::<f32>::new(64, 4, 7, &mut rng).is_err());
    }
}
