use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Mat;

pub const EMB: usize = 0;
pub const ENC_FWD: usize = 1;
pub const ENC_BWD: usize = 5;
pub const INIT_W: usize = 9;
pub const INIT_B: usize = 10;
pub const ATTN: usize = 11;
pub const DEC: usize = 12;
pub const COMB_W: usize = 16;
pub const COMB_B: usize = 17;
pub const OUT_W: usize = 18;
pub const OUT_B: usize = 19;

pub const NAMES: [&str; 20] = [
    "embedding",
    "encoder.fwd.w",
    "encoder.fwd.u",
    "encoder.fwd.bx",
    "encoder.fwd.bh",
    "encoder.bwd.w",
    "encoder.bwd.u",
    "encoder.bwd.bx",
    "encoder.bwd.bh",
    "decoder.init.w",
    "decoder.init.b",
    "decoder.attention",
    "decoder.gru.w",
    "decoder.gru.u",
    "decoder.gru.bx",
    "decoder.gru.bh",
    "decoder.combine.w",
    "decoder.combine.b",
    "decoder.out.w",
    "decoder.out.b",
];

/// All trainable tensors, addressed by the index constants above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<Mat>,
}

impl Params {
    /// Tensor shapes for vocabulary `v`, embedding `e` and hidden size `h`.
    pub fn shapes(v: usize, e: usize, h: usize) -> Vec<(usize, usize)> {
        let gru = |input: usize| [(3 * h, input), (3 * h, h), (3 * h, 1), (3 * h, 1)];
        let mut s = vec![(v, e)];
        s.extend(gru(e));
        s.extend(gru(e));
        s.extend([(h, 2 * h), (h, 1), (h, 2 * h)]);
        s.extend(gru(e + h));
        s.extend([(h, 3 * h), (h, 1), (v, h), (v, 1)]);
        s
    }

    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Params {
            tensors: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Params {
            tensors: other.tensors.iter().map(Mat::zeros_like).collect(),
        }
    }

    /// Weights uniform in `±scale`, biases zero.
    pub fn random<R: Rng>(shapes: &[(usize, usize)], scale: f64, rng: &mut R) -> Self {
        let mut p = Params::zeros(shapes);
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if is_bias(i) {
                continue;
            }
            for x in &mut t.data {
                *x = rng.random_range(-scale..scale);
            }
        }
        p
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= k;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }
}

fn is_bias(i: usize) -> bool {
    NAMES[i].ends_with(".b") || NAMES[i].ends_with(".bx") || NAMES[i].ends_with(".bh")
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Params,
    v: Params,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(like: &Params) -> Self {
        Adam {
            m: Params::zeros_like(like),
            v: Params::zeros_like(like),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
