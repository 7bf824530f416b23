use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::matmul;
use super::{Real, Tensor};

/// Trainable buffer with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters. Visiting order is fixed and defines the
/// layout of checkpoints and optimizer state.
pub trait Module<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill(T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    /// Overwrites every parameter from a flat buffer produced by
    /// [`Module::flat_params`]. Returns false on a length mismatch.
    fn load_flat(&mut self, flat: &[T]) -> bool {
        if flat.len() != self.param_count() {
            return false;
        }
        let mut at = 0;
        self.visit_mut(&mut |p| {
            let n = p.len();
            p.value.copy_from_slice(&flat[at..at + n]);
            at += n;
        });
        true
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |p| s += p.grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>());
        s.sqrt()
    }

    fn scale_grads(&mut self, k: T) {
        self.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g *= k));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `[out, in * k * k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let weight = (0..out_ch * fan_in)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Self {
            weight: Param::new(weight),
            bias: Param::zeros(out_ch),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |v: usize| (v + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    /// Samples per unrolled block, keeping the column buffer near 4 MB.
    fn block(&self, n: usize, hw: usize) -> usize {
        let kk = self.in_ch * self.kernel * self.kernel;
        ((1 << 20) / (kk * hw).max(1)).clamp(1, n.max(1))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.in_ch, "conv input channels");
        let (ho, wo) = self.out_size(x.h(), x.w());
        let kk = self.in_ch * self.kernel * self.kernel;
        let (n, hw) = (x.n(), ho * wo);
        let bs = self.block(n, hw);
        let mut y = Tensor::zeros([n, self.out_ch, ho, wo]);
        let mut cols = vec![T::zero(); kk * bs * hw];
        let mut out = vec![T::zero(); self.out_ch * bs * hw];
        for start in (0..n).step_by(bs) {
            let m = bs.min(n - start);
            let cols = &mut cols[..kk * m * hw];
            let out = &mut out[..self.out_ch * m * hw];
            for j in 0..m {
                im2col(x.sample(start + j), m, j, x.c(), x.h(), x.w(), self, ho, wo, cols);
            }
            for (o, row) in out.chunks_mut(m * hw).enumerate() {
                row.fill(self.bias.value[o]);
            }
            matmul(self.out_ch, m * hw, kk, &self.weight.value, false, cols, false, out, true);
            for j in 0..m {
                let dst = y.sample_mut(start + j);
                for o in 0..self.out_ch {
                    dst[o * hw..(o + 1) * hw].copy_from_slice(&out[o * m * hw + j * hw..][..hw]);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (ho, wo) = (dy.h(), dy.w());
        let kk = self.in_ch * self.kernel * self.kernel;
        let (n, hw) = (x.n(), ho * wo);
        let co = self.out_ch;
        let bs = self.block(n, hw);
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = vec![T::zero(); kk * bs * hw];
        let mut g = vec![T::zero(); co * bs * hw];
        let mut gt = vec![T::zero(); co * bs * hw];
        let mut dwt = vec![T::zero(); kk * co];
        for start in (0..n).step_by(bs) {
            let m = bs.min(n - start);
            let cols = &mut cols[..kk * m * hw];
            // g: [out, m * hw]; gt: [m * hw, out]
            let g = &mut g[..co * m * hw];
            let gt = &mut gt[..co * m * hw];
            for j in 0..m {
                let src = dy.sample(start + j);
                for o in 0..co {
                    let seg = &src[o * hw..(o + 1) * hw];
                    self.bias.grad[o] += seg.iter().copied().sum::<T>();
                    g[o * m * hw + j * hw..][..hw].copy_from_slice(seg);
                    for (p, &v) in seg.iter().enumerate() {
                        gt[(j * hw + p) * co + o] = v;
                    }
                }
                im2col(x.sample(start + j), m, j, x.c(), x.h(), x.w(), self, ho, wo, cols);
            }
            // dW^T = cols · g^T keeps both operands in their stored layout.
            matmul(kk, co, m * hw, cols, false, gt, false, &mut dwt, start > 0);
            if let Some(dx) = dx.as_mut() {
                matmul(kk, m * hw, co, &self.weight.value, true, g, false, cols, false);
                for j in 0..m {
                    col2im(cols, m, j, x.c(), x.h(), x.w(), self, ho, wo, dx.sample_mut(start + j));
                }
            }
        }
        for (r, row) in dwt.chunks(co).enumerate() {
            for (o, &v) in row.iter().enumerate() {
                self.weight.grad[o * kk + r] += v;
            }
        }
        dx
    }
}

/// Output columns `ox` whose input column `ox * s + kx - p` lies inside `[0, w)`.
#[inline]
fn valid_span(wo: usize, w: usize, s: usize, kx: usize, p: usize) -> (usize, usize) {
    // ox * s + kx >= p
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // ox * s + kx - p <= w - 1
    let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    n: usize,
    i: usize,
    c: usize,
    h: usize,
    w: usize,
    conv: &Conv2d<T>,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
    let hw = ho * wo;
    let stride_row = n * hw;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * stride_row + i * hw..][..hw];
                let (lo, hi) = valid_span(wo, w, s, kx, p);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h || lo >= hi {
                        continue;
                    }
                    let src = &plane[(iy - p) * w..(iy - p + 1) * w];
                    let first = lo * s + kx - p;
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for sample `i`; overwrites `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    n: usize,
    i: usize,
    c: usize,
    h: usize,
    w: usize,
    conv: &Conv2d<T>,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
    let hw = ho * wo;
    let stride_row = n * hw;
    dx.fill(T::zero());
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * stride_row + i * hw..][..hw];
                let (lo, hi) = valid_span(wo, w, s, kx, p);
                if lo >= hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy - p) * w..(iy - p + 1) * w];
                    let first = lo * s + kx - p;
                    let src = &row[oy * wo + lo..oy * wo + hi];
                    if s == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(s).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Group normalization with per-channel affine; `groups == channels` gives
/// instance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct NormTrace<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0);
        Self {
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::zeros(channels),
            groups,
            channels,
            eps: 1e-5,
        }
    }

    pub fn instance(channels: usize) -> Self {
        Self::new(channels, channels)
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormTrace<T>) {
        assert_eq!(x.c(), self.channels, "norm channels");
        let hw = x.h() * x.w();
        let cg = self.channels / self.groups;
        let gl = cg * hw;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(x.n() * self.groups);
        for i in 0..x.n() {
            let src = x.sample(i);
            let xh = xhat.sample_mut(i);
            for g in 0..self.groups {
                let seg = &src[g * gl..(g + 1) * gl];
                let mean = seg.iter().map(|v| v.f64()).sum::<f64>() / gl as f64;
                let var = seg.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / gl as f64;
                let is = 1.0 / (var + self.eps).sqrt();
                inv_std.push(T::of(is));
                let (m, is) = (T::of(mean), T::of(is));
                for (d, &v) in xh[g * gl..(g + 1) * gl].iter_mut().zip(seg) {
                    *d = (v - m) * is;
                }
            }
            let out = y.sample_mut(i);
            for ch in 0..self.channels {
                let (ga, be) = (self.gamma.value[ch], self.beta.value[ch]);
                for (o, &v) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&xh[ch * hw..(ch + 1) * hw]) {
                    *o = v * ga + be;
                }
            }
        }
        (y, NormTrace { xhat, inv_std })
    }

    pub fn backward(&mut self, trace: &NormTrace<T>, dy: &Tensor<T>) -> Tensor<T> {
        let hw = dy.h() * dy.w();
        let cg = self.channels / self.groups;
        let gl = cg * hw;
        let m = T::of(gl as f64);
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![T::zero(); dy.sample_len()];
        for i in 0..dy.n() {
            let g_out = dy.sample(i);
            let xh = trace.xhat.sample(i);
            for ch in 0..self.channels {
                let r = ch * hw..(ch + 1) * hw;
                let ga = self.gamma.value[ch];
                let (mut dg, mut db) = (T::zero(), T::zero());
                for ((d, &g), &v) in dxhat[r.clone()].iter_mut().zip(&g_out[r.clone()]).zip(&xh[r]) {
                    dg += g * v;
                    db += g;
                    *d = g * ga;
                }
                self.gamma.grad[ch] += dg;
                self.beta.grad[ch] += db;
            }
            let out = dx.sample_mut(i);
            for g in 0..self.groups {
                let r = g * gl..(g + 1) * gl;
                let is = trace.inv_std[i * self.groups + g];
                let sum_d: T = dxhat[r.clone()].iter().copied().sum();
                let sum_dx: T = dxhat[r.clone()].iter().zip(&xh[r.clone()]).map(|(&d, &v)| d * v).sum();
                for ((o, &d), &v) in out[r.clone()].iter_mut().zip(&dxhat[r.clone()]).zip(&xh[r]) {
                    *o = is / m * (m * d - sum_d - v * sum_dx);
                }
            }
        }
        dx
    }
}

pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h(), x.w());
    let mut y = Tensor::zeros([x.n(), x.c(), 2 * h, 2 * w]);
    let planes = x.n() * x.c();
    for pl in 0..planes {
        let src = &x.data()[pl * h * w..(pl + 1) * h * w];
        let dst = &mut y.data_mut()[pl * 4 * h * w..(pl + 1) * 4 * h * w];
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h() / 2, dy.w() / 2);
    let mut dx = Tensor::zeros([dy.n(), dy.c(), h, w]);
    let planes = dy.n() * dy.c();
    for pl in 0..planes {
        let src = &dy.data()[pl * 4 * h * w..(pl + 1) * 4 * h * w];
        let dst = &mut dx.data_mut()[pl * h * w..(pl + 1) * h * w];
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
            }
        }
    }
    dx
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Norm(GroupNorm<T>),
    /// Leaky ReLU with the given negative slope; `0.0` is a plain ReLU.
    LeakyRelu(f64),
    Tanh,
    Upsample2x,
    /// `x + body(x)`
    Residual(Seq<T>),
}

#[derive(Clone, Debug)]
enum Trace<T> {
    Input(Tensor<T>),
    Norm(NormTrace<T>),
    Output(Tensor<T>),
    Shape,
    Residual(SeqTrace<T>),
}

/// Saved activations of one [`Seq::forward`] call.
#[derive(Clone, Debug)]
pub struct SeqTrace<T> {
    traces: Vec<Trace<T>>,
}

/// Sequential stack of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Seq<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Seq<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, mut x: Tensor<T>) -> (Tensor<T>, SeqTrace<T>) {
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, t) = match layer {
                Layer::Conv(c) => (c.forward(&x), Trace::Input(x)),
                Layer::Norm(n) => {
                    let (y, t) = n.forward(&x);
                    (y, Trace::Norm(t))
                }
                Layer::LeakyRelu(slope) => {
                    let s = T::of(*slope);
                    let y = x.map(|v| if v > T::zero() { v } else { v * s });
                    (y.clone(), Trace::Output(y))
                }
                Layer::Tanh => {
                    let y = x.map(|v| v.tanh());
                    (y.clone(), Trace::Output(y))
                }
                Layer::Upsample2x => (upsample2x(&x), Trace::Shape),
                Layer::Residual(body) => {
                    let (mut y, t) = body.forward(x.clone());
                    y.add_assign(&x);
                    (y, Trace::Residual(t))
                }
            };
            traces.push(t);
            x = y;
        }
        (x, SeqTrace { traces })
    }

    /// Forward pass without keeping activations.
    pub fn infer(&self, mut x: Tensor<T>) -> Tensor<T> {
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x),
                Layer::Norm(n) => n.forward(&x).0,
                Layer::LeakyRelu(slope) => {
                    let s = T::of(*slope);
                    x.map(|v| if v > T::zero() { v } else { v * s })
                }
                Layer::Tanh => x.map(|v| v.tanh()),
                Layer::Upsample2x => upsample2x(&x),
                Layer::Residual(body) => {
                    let mut y = body.infer(x.clone());
                    y.add_assign(&x);
                    y
                }
            };
        }
        x
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(&mut self, trace: &SeqTrace<T>, mut dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        assert_eq!(trace.traces.len(), self.layers.len(), "trace from a different network");
        for (idx, (layer, t)) in self.layers.iter_mut().zip(&trace.traces).enumerate().rev() {
            let want = need_dx || idx > 0;
            dy = match (layer, t) {
                (Layer::Conv(c), Trace::Input(x)) => match c.backward(x, &dy, want) {
                    Some(dx) => dx,
                    None => return None,
                },
                (Layer::Norm(n), Trace::Norm(t)) => n.backward(t, &dy),
                (Layer::LeakyRelu(slope), Trace::Output(y)) => {
                    let s = T::of(*slope);
                    let mut g = dy;
                    for (d, &v) in g.data_mut().iter_mut().zip(y.data()) {
                        if v <= T::zero() {
                            *d *= s;
                        }
                    }
                    g
                }
                (Layer::Tanh, Trace::Output(y)) => {
                    let mut g = dy;
                    for (d, &v) in g.data_mut().iter_mut().zip(y.data()) {
                        *d *= T::one() - v * v;
                    }
                    g
                }
                (Layer::Upsample2x, Trace::Shape) => upsample2x_backward(&dy),
                (Layer::Residual(body), Trace::Residual(t)) => {
                    let mut g = body.backward(t, dy.clone(), true).expect("residual body dx");
                    g.add_assign(&dy);
                    g
                }
                _ => unreachable!("layer/trace mismatch"),
            };
        }
        Some(dy)
    }
}

impl<T: Real> Module<T> for Seq<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    f(&c.weight);
                    f(&c.bias);
                }
                Layer::Norm(n) => {
                    f(&n.gamma);
                    f(&n.beta);
                }
                Layer::Residual(body) => body.visit(f),
                _ => {}
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    f(&mut c.weight);
                    f(&mut c.bias);
                }
                Layer::Norm(n) => {
                    f(&mut n.gamma);
                    f(&mut n.beta);
                }
                Layer::Residual(body) => body.visit_mut(f),
                _ => {}
            }
        }
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Scalar probe: sum(w ⊙ net(x)).
    fn probe(net: &Seq<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
        net.infer(x.clone()).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    fn check_net(mut net: Seq<f64>, shape: [usize; 4], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(shape, &mut rng);
        let (y, trace) = net.forward(x.clone());
        let w = rand_tensor(y.shape(), &mut rng);
        net.zero_grad();
        let dx = net.backward(&trace, w.clone(), true).unwrap();
        let h = 1e-6;
        for idx in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (probe(&net, &xp, &w) - probe(&net, &xm, &w)) / (2.0 * h);
            let an = dx.data()[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "dx[{idx}] fd {fd} vs {an}");
        }
        let flat = net.flat_params();
        let grads = net.flat_grads();
        for idx in (0..flat.len()).step_by(5) {
            let mut p = flat.clone();
            p[idx] += h;
            let mut plus = net.clone();
            plus.load_flat(&p);
            p[idx] -= 2.0 * h;
            let mut minus = net.clone();
            minus.load_flat(&p);
            let fd = (probe(&plus, &x, &w) - probe(&minus, &x, &w)) / (2.0 * h);
            assert!((fd - grads[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "dp[{idx}] fd {fd} vs {}", grads[idx]);
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Seq::new(vec![
            Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, &mut rng)),
            Layer::Tanh,
            Layer::Conv(Conv2d::new(3, 4, 4, 2, 1, &mut rng)),
            Layer::Tanh,
            Layer::Conv(Conv2d::new(4, 2, 1, 1, 0, &mut rng)),
        ]);
        check_net(net, [2, 2, 6, 6], 2);
    }

    #[test]
    fn norm_residual_upsample_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gn = GroupNorm::new(4, 2);
        gn.gamma.value = vec![0.5, 1.5, -0.7, 1.1];
        gn.beta.value = vec![0.1, -0.2, 0.3, 0.0];
        let net = Seq::new(vec![
            Layer::Conv(Conv2d::new(2, 4, 3, 1, 1, &mut rng)),
            Layer::Norm(gn),
            Layer::Tanh,
            Layer::Residual(Seq::new(vec![
                Layer::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
                Layer::Norm(GroupNorm::instance(4)),
                Layer::Tanh,
            ])),
            Layer::Upsample2x,
            Layer::Conv(Conv2d::new(4, 1, 3, 1, 1, &mut rng)),
        ]);
        check_net(net, [2, 2, 4, 4], 4);
    }

    #[test]
    fn leaky_relu_gradient_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Seq::new(vec![Layer::Conv(Conv2d::new(1, 2, 3, 1, 1, &mut rng)), Layer::LeakyRelu(0.1)]);
        check_net(net, [1, 1, 5, 5], 6);
    }

    #[test]
    fn pointwise_conv_matches_general_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let conv: Conv2d<f64> = Conv2d::new(3, 2, 1, 1, 0, &mut rng);
        let x = rand_tensor([2, 3, 4, 5], &mut rng);
        let y = conv.forward(&x);
        for n in 0..2 {
            for o in 0..2 {
                for p in 0..20 {
                    let want: f64 = (0..3).map(|c| conv.weight.value[o * 3 + c] * x.sample(n)[c * 20 + p]).sum();
                    assert!((y.sample(n)[o * 20 + p] - want).abs() < 1e-12);
                }
            }
        }
    }
}
