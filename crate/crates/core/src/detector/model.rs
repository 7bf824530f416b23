use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{build_anchors, AnchorConfig};
use super::assign::decode;
use super::focal::FocalLossConfig;
use crate::geometry::Rect;
use crate::nn::{upsample2x, upsample2x_backward, Conv2d, GroupNorm, Layer, Module, Param, Real, Seq, SeqTrace, Tensor};
use crate::{Error, Result};

/// Architecture and loss settings of the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub stem_channels: [usize; 2],
    pub stage_channels: [usize; 3],
    pub fpn_channels: usize,
    pub norm_groups: usize,
    pub anchors: AnchorConfig,
    pub focal: FocalLossConfig,
    pub smooth_l1_beta: f64,
    /// Initial foreground probability of every anchor.
    pub prior: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            stem_channels: [16, 24],
            stage_channels: [32, 48, 64],
            fpn_channels: 32,
            norm_groups: 8,
            anchors: AnchorConfig::default(),
            focal: FocalLossConfig::default(),
            smooth_l1_beta: 0.1,
            prior: 0.01,
        }
    }
}

/// Input side must be a multiple of the coarsest stride.
pub const MAX_STRIDE: usize = 32;
pub const STRIDES: [usize; 3] = [8, 16, 32];

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        self.focal.validate()?;
        if self.anchors.levels() != STRIDES.len() {
            return Err(Error::Config(format!(
                "{} anchor levels configured, the pyramid has {}",
                self.anchors.levels(),
                STRIDES.len()
            )));
        }
        let g = self.norm_groups;
        if g == 0 || self.stage_channels.iter().chain([&self.fpn_channels]).any(|c| c % g != 0) {
            return Err(Error::Config("norm_groups must divide stage and pyramid widths".into()));
        }
        if self.stem_channels.contains(&0) || self.fpn_channels == 0 {
            return Err(Error::Config("channel widths must be > 0".into()));
        }
        if !(self.smooth_l1_beta > 0.0) || !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::Config("smooth_l1_beta must be > 0 and prior in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Small residual backbone, three-level feature pyramid and shared
/// classification / box-regression heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector<T> {
    pub config: DetectorConfig,
    pub stem: Seq<T>,
    pub stages: Vec<Seq<T>>,
    pub lateral: Vec<Conv2d<T>>,
    pub smooth: Vec<Conv2d<T>>,
    pub cls_head: Seq<T>,
    pub reg_head: Seq<T>,
}

/// Raw head outputs, anchor-major: `logits[i * A + a]`, `deltas[(i * A + a) * 4 + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<T> {
    pub anchors_per_image: usize,
    pub logits: Vec<T>,
    pub deltas: Vec<T>,
}

pub struct DetectorTrace<T> {
    stem: SeqTrace<T>,
    stages: Vec<SeqTrace<T>>,
    feats: Vec<Tensor<T>>,
    merged: Vec<Tensor<T>>,
    pyramid: Vec<Tensor<T>>,
    cls: Vec<SeqTrace<T>>,
    reg: Vec<SeqTrace<T>>,
    head_shapes: Vec<[usize; 4]>,
}

fn conv<T: Real>(i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> Layer<T> {
    Layer::Conv(Conv2d::new(i, o, k, s, p, rng))
}

impl<T: Real> Detector<T> {
    pub fn new(config: DetectorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let g = config.norm_groups;
        let [s0, s1] = config.stem_channels;
        let stem = Seq::new(vec![
            conv(3, s0, 3, 2, 1, rng),
            Layer::LeakyRelu(0.0),
            conv(s0, s1, 3, 2, 1, rng),
            Layer::LeakyRelu(0.0),
        ]);
        let mut stages = Vec::new();
        let mut ch = s1;
        for &out in &config.stage_channels {
            stages.push(Seq::new(vec![
                conv(ch, out, 3, 2, 1, rng),
                Layer::Norm(GroupNorm::new(out, g)),
                Layer::LeakyRelu(0.0),
                Layer::Residual(Seq::new(vec![
                    conv(out, out, 3, 1, 1, rng),
                    Layer::Norm(GroupNorm::new(out, g)),
                    Layer::LeakyRelu(0.0),
                    conv(out, out, 3, 1, 1, rng),
                    Layer::Norm(GroupNorm::new(out, g)),
                ])),
                Layer::LeakyRelu(0.0),
            ]));
            ch = out;
        }
        let f = config.fpn_channels;
        let lateral = config.stage_channels.iter().map(|&c| Conv2d::new(c, f, 1, 1, 0, rng)).collect();
        let smooth = (0..STRIDES.len()).map(|_| Conv2d::new(f, f, 3, 1, 1, rng)).collect();
        let a = config.anchors.per_cell();
        let mut cls_head = head(f, g, a, rng);
        let reg_head = head(f, g, 4 * a, rng);
        let bias = T::of(-((1.0 - config.prior) / config.prior).ln());
        if let Some(Layer::Conv(c)) = cls_head.layers.last_mut() {
            c.bias.value.fill(bias);
        }
        Ok(Self {
            config,
            stem,
            stages,
            lateral,
            smooth,
            cls_head,
            reg_head,
        })
    }

    /// Zeroes the classification output weights so that every score equals
    /// the prior.
    pub fn zero_classifier(&mut self) {
        if let Some(Layer::Conv(c)) = self.cls_head.layers.last_mut() {
            c.weight.value.fill(T::zero());
        }
    }

    pub fn check_input(x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h != w || h == 0 || h % MAX_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "detector expects square 3-channel input with side divisible by {MAX_STRIDE}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Anchors of an `image_size` input, in head-output order.
    pub fn anchors(&self, image_size: usize) -> Vec<Rect> {
        let mut out = Vec::new();
        for (level, &stride) in STRIDES.iter().enumerate() {
            let cells = image_size / stride;
            out.extend(build_anchors(&self.config.anchors, level, stride as f64, cells).expect("configured level"));
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(HeadOutput<T>, DetectorTrace<T>)> {
        Self::check_input(x)?;
        let (mut h, stem) = self.stem.forward(x.clone());
        let mut stages = Vec::new();
        let mut feats = Vec::new();
        for s in &self.stages {
            let (y, t) = s.forward(h);
            stages.push(t);
            feats.push(y.clone());
            h = y;
        }
        let lat: Vec<Tensor<T>> = self.lateral.iter().zip(&feats).map(|(c, f)| c.forward(f)).collect();
        let mut merged = vec![Tensor::zeros([0, 0, 0, 0]); lat.len()];
        let top = lat.len() - 1;
        merged[top] = lat[top].clone();
        for l in (0..top).rev() {
            let mut m = lat[l].clone();
            m.add_assign(&upsample2x(&merged[l + 1]));
            merged[l] = m;
        }
        let pyramid: Vec<Tensor<T>> = self.smooth.iter().zip(&merged).map(|(c, m)| c.forward(m)).collect();
        let mut cls = Vec::new();
        let mut reg = Vec::new();
        let mut cls_out = Vec::new();
        let mut reg_out = Vec::new();
        for p in &pyramid {
            let (c, ct) = self.cls_head.forward(p.clone());
            let (r, rt) = self.reg_head.forward(p.clone());
            cls.push(ct);
            reg.push(rt);
            cls_out.push(c);
            reg_out.push(r);
        }
        let head_shapes = cls_out.iter().map(|t| t.shape()).collect();
        let out = self.gather(&cls_out, &reg_out);
        Ok((
            out,
            DetectorTrace {
                stem,
                stages,
                feats,
                merged,
                pyramid,
                cls,
                reg,
                head_shapes,
            },
        ))
    }

    /// Forward pass without saved activations.
    pub fn infer(&self, x: &Tensor<T>) -> Result<HeadOutput<T>> {
        Self::check_input(x)?;
        let mut h = self.stem.infer(x.clone());
        let mut feats = Vec::new();
        for s in &self.stages {
            h = s.infer(h);
            feats.push(h.clone());
        }
        let lat: Vec<Tensor<T>> = self.lateral.iter().zip(&feats).map(|(c, f)| c.forward(f)).collect();
        let top = lat.len() - 1;
        let mut merged = vec![Tensor::zeros([0, 0, 0, 0]); lat.len()];
        merged[top] = lat[top].clone();
        for l in (0..top).rev() {
            let mut m = lat[l].clone();
            m.add_assign(&upsample2x(&merged[l + 1]));
            merged[l] = m;
        }
        let mut cls_out = Vec::new();
        let mut reg_out = Vec::new();
        for (c, m) in self.smooth.iter().zip(&merged) {
            let p = c.forward(m);
            cls_out.push(self.cls_head.infer(p.clone()));
            reg_out.push(self.reg_head.infer(p));
        }
        Ok(self.gather(&cls_out, &reg_out))
    }

    fn gather(&self, cls: &[Tensor<T>], reg: &[Tensor<T>]) -> HeadOutput<T> {
        let a = self.config.anchors.per_cell();
        let n = cls[0].n();
        let per_image: usize = cls.iter().map(|t| t.h() * t.w() * a).sum();
        let mut logits = Vec::with_capacity(n * per_image);
        let mut deltas = Vec::with_capacity(n * per_image * 4);
        for i in 0..n {
            for (c, r) in cls.iter().zip(reg) {
                let hw = c.h() * c.w();
                let (cs, rs) = (c.sample(i), r.sample(i));
                for cell in 0..hw {
                    for k in 0..a {
                        logits.push(cs[k * hw + cell]);
                        for j in 0..4 {
                            deltas.push(rs[(k * 4 + j) * hw + cell]);
                        }
                    }
                }
            }
        }
        HeadOutput {
            anchors_per_image: per_image,
            logits,
            deltas,
        }
    }

    /// Accumulates parameter gradients from gradients of the head outputs
    /// (same layout as [`HeadOutput`]).
    pub fn backward(&mut self, trace: &DetectorTrace<T>, dlogits: &[T], ddeltas: &[T]) {
        let a = self.config.anchors.per_cell();
        let shapes = &trace.head_shapes;
        let n = shapes[0][0];
        let mut dcls: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros([n, a, s[2], s[3]])).collect();
        let mut dreg: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros([n, 4 * a, s[2], s[3]])).collect();
        let mut at = 0;
        for i in 0..n {
            for (dc, dr) in dcls.iter_mut().zip(dreg.iter_mut()) {
                let hw = dc.h() * dc.w();
                let (cs, rs) = (dc.sample_mut(i), dr.sample_mut(i));
                for cell in 0..hw {
                    for k in 0..a {
                        cs[k * hw + cell] = dlogits[at];
                        for j in 0..4 {
                            rs[(k * 4 + j) * hw + cell] = ddeltas[at * 4 + j];
                        }
                        at += 1;
                    }
                }
            }
        }
        let levels = trace.pyramid.len();
        let mut dmerged = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut dp = self.cls_head.backward(&trace.cls[l], dcls[l].clone(), true).expect("head dx");
            dp.add_assign(&self.reg_head.backward(&trace.reg[l], dreg[l].clone(), true).expect("head dx"));
            dmerged.push(self.smooth[l].backward(&trace.merged[l], &dp, true).expect("smooth dx"));
        }
        // top-down merge: merged[l] = lat[l] + up(merged[l + 1])
        for l in 1..levels {
            let up = upsample2x_backward(&dmerged[l - 1]);
            dmerged[l].add_assign(&up);
        }
        let mut dfeat: Option<Tensor<T>> = None;
        for l in (0..levels).rev() {
            let mut d = self.lateral[l].backward(&trace.feats[l], &dmerged[l], true).expect("lateral dx");
            if let Some(from_above) = dfeat.take() {
                d.add_assign(&from_above);
            }
            dfeat = self.stages[l].backward(&trace.stages[l], d, true);
        }
        self.stem.backward(&trace.stem, dfeat.expect("stage dx"), false);
    }

    /// Per-image `(box, score)` for every anchor, scores in `[0, 1]`.
    pub fn detect(&self, x: &Tensor<T>) -> Result<Vec<Vec<(Rect, f64)>>> {
        let out = self.infer(x)?;
        let anchors = self.anchors(x.h());
        let per = out.anchors_per_image;
        Ok((0..x.n())
            .map(|i| {
                anchors
                    .iter()
                    .enumerate()
                    .map(|(k, anchor)| {
                        let idx = i * per + k;
                        let d = &out.deltas[idx * 4..idx * 4 + 4];
                        let b = decode(anchor, [d[0].f64(), d[1].f64(), d[2].f64(), d[3].f64()]);
                        (b, sigmoid(out.logits[idx].f64()))
                    })
                    .collect()
            })
            .collect())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn head<T: Real>(f: usize, groups: usize, out: usize, rng: &mut impl Rng) -> Seq<T> {
    Seq::new(vec![
        conv(f, f, 3, 1, 1, rng),
        Layer::Norm(GroupNorm::new(f, groups)),
        Layer::LeakyRelu(0.0),
        Layer::Conv(small_conv(f, out, rng)),
    ])
}

/// Output convolution with small weights, as usual for detection heads.
fn small_conv<T: Real>(i: usize, o: usize, rng: &mut impl Rng) -> Conv2d<T> {
    let mut c = Conv2d::new(i, o, 3, 1, 1, rng);
    let k = T::of(0.01 / (2.0 / (i * 9) as f64).sqrt());
    c.weight.value.iter_mut().for_each(|w| *w *= k);
    c
}

impl<T: Real> Module<T> for Detector<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        for s in &self.stages {
            s.visit(f);
        }
        for c in &self.lateral {
            c.visit(f);
        }
        for c in &self.smooth {
            c.visit(f);
        }
        self.cls_head.visit(f);
        self.reg_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        for s in &mut self.stages {
            s.visit_mut(f);
        }
        for c in &mut self.lateral {
            c.visit_mut(f);
        }
        for c in &mut self.smooth {
            c.visit_mut(f);
        }
        self.cls_head.visit_mut(f);
        self.reg_head.visit_mut(f);
    }
}
