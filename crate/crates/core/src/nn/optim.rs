use serde::{Deserialize, Serialize};

use super::{Module, Real};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<T: Real>(&mut self, module: &mut impl Module<T>) {
        let n = module.param_count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut at = 0;
        module.visit_mut(&mut |p| {
            for (w, g) in p.value.iter_mut().zip(&p.grad) {
                let g = g.f64();
                let mi = b1 * m[at] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[at] as f64 + (1.0 - b2) * g * g;
                m[at] = mi as f32;
                v[at] = vi as f32;
                *w -= T::of(lr * (mi / c1) / ((vi / c2).sqrt() + eps));
                at += 1;
            }
        });
    }
}

/// SGD with heavy-ball momentum and decoupled L2 weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step<T: Real>(&mut self, module: &mut impl Module<T>, lr: f64) {
        let n = module.param_count();
        if self.velocity.len() != n {
            self.velocity = vec![0.0; n];
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        let vel = &mut self.velocity;
        let mut at = 0;
        module.visit_mut(&mut |p| {
            for (w, g) in p.value.iter_mut().zip(&p.grad) {
                let g = g.f64() + wd * w.f64();
                let v = mu * vel[at] as f64 + g;
                vel[at] = v as f32;
                *w -= T::of(lr * v);
                at += 1;
            }
        });
    }
}
