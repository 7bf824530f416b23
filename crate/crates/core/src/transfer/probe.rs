use super::loss::cross_entropy;
use crate::style::NUM_DOMAINS;

const FEATURES: usize = 15;

/// Softmax regression on per-channel colour statistics. Used to judge
/// whether a translated patch carries its target domain's style,
/// independently of the critic that shaped the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleProbe {
    shift: [f64; FEATURES],
    scale: [f64; FEATURES],
    /// `[NUM_DOMAINS][FEATURES + 1]`, bias last.
    weights: Vec<f64>,
}

impl StyleProbe {
    /// Mean, standard deviation and 10/50/90th percentiles of each channel
    /// of a planar 3-channel sample.
    pub fn features(pixels: &[f32]) -> [f64; FEATURES] {
        let plane = pixels.len() / 3;
        let mut out = [0.0; FEATURES];
        for ch in 0..3 {
            let mut v: Vec<f64> = pixels[ch * plane..(ch + 1) * plane].iter().map(|&p| p as f64).collect();
            let m = v.iter().sum::<f64>() / plane as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / plane as f64).sqrt();
            v.sort_by(f64::total_cmp);
            let q = |f: f64| v[((plane - 1) as f64 * f).round() as usize];
            out[ch * 5..ch * 5 + 5].copy_from_slice(&[m, sd, q(0.1), q(0.5), q(0.9)]);
        }
        out
    }

    /// Fits on `(planar pixels, domain)` pairs with full-batch gradient descent.
    pub fn fit(samples: &[(&[f32], usize)], steps: usize) -> Self {
        assert!(!samples.is_empty());
        let raw: Vec<[f64; FEATURES]> = samples.iter().map(|(p, _)| Self::features(p)).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.1).collect();
        let n = raw.len() as f64;
        let mut shift = [0.0; FEATURES];
        let mut scale = [1.0; FEATURES];
        for f in 0..FEATURES {
            let m = raw.iter().map(|r| r[f]).sum::<f64>() / n;
            let sd = (raw.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n).sqrt();
            shift[f] = m;
            scale[f] = if sd > 1e-9 { sd } else { 1.0 };
        }
        let mut probe = Self {
            shift,
            scale,
            weights: vec![0.0; NUM_DOMAINS * (FEATURES + 1)],
        };
        let xs: Vec<[f64; FEATURES]> = raw.iter().map(|r| probe.standardize(r)).collect();
        let lr = 0.5;
        for _ in 0..steps {
            let logits: Vec<f64> = xs.iter().flat_map(|x| probe.logits(x)).collect();
            let (_, dlog) = cross_entropy(&logits, &labels);
            let mut grad = vec![0.0; probe.weights.len()];
            for (i, x) in xs.iter().enumerate() {
                for k in 0..NUM_DOMAINS {
                    let g = dlog[i * NUM_DOMAINS + k];
                    let row = &mut grad[k * (FEATURES + 1)..(k + 1) * (FEATURES + 1)];
                    for f in 0..FEATURES {
                        row[f] += g * x[f];
                    }
                    row[FEATURES] += g;
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&grad) {
                *w -= lr * (g + 1e-4 * *w);
            }
        }
        probe
    }

    fn standardize(&self, raw: &[f64; FEATURES]) -> [f64; FEATURES] {
        let mut x = [0.0; FEATURES];
        for f in 0..FEATURES {
            x[f] = (raw[f] - self.shift[f]) / self.scale[f];
        }
        x
    }

    fn logits(&self, x: &[f64; FEATURES]) -> [f64; NUM_DOMAINS] {
        let mut out = [0.0; NUM_DOMAINS];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * (FEATURES + 1)..(k + 1) * (FEATURES + 1)];
            *o = row[FEATURES] + (0..FEATURES).map(|f| row[f] * x[f]).sum::<f64>();
        }
        out
    }

    pub fn predict(&self, pixels: &[f32]) -> usize {
        let l = self.logits(&self.standardize(&Self::features(pixels)));
        (0..NUM_DOMAINS).max_by(|&a, &b| l[a].total_cmp(&l[b])).expect("non-empty")
    }

    pub fn accuracy(&self, samples: &[(&[f32], usize)]) -> f64 {
        let hits = samples.iter().filter(|(p, d)| self.predict(p) == *d).count();
        hits as f64 / samples.len().max(1) as f64
    }
}
