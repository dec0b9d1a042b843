use rand::Rng;
use serde::{Deserialize, Serialize};

/// Binary output head: `N → N` FC, ReLU, `N → 1` FC, sigmoid. Kept in f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub n: usize,
    /// `[out][in]`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl HeadGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            w1: vec![0.0; n * n],
            b1: vec![0.0; n],
            w2: vec![0.0; n],
            b2: 0.0,
        }
    }

    pub fn add(&mut self, other: &HeadGrad) {
        self.w1.iter_mut().zip(&other.w1).for_each(|(a, b)| *a += b);
        self.b1.iter_mut().zip(&other.b1).for_each(|(a, b)| *a += b);
        self.w2.iter_mut().zip(&other.w2).for_each(|(a, b)| *a += b);
        self.b2 += other.b2;
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }
}

/// Intermediates of one head evaluation.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    pub out: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Head {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(n: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        let mut u = || rng.random_range(-bound..bound);
        Self {
            n,
            w1: (0..n * n).map(|_| u()).collect(),
            b1: (0..n).map(|_| u()).collect(),
            w2: (0..n).map(|_| u()).collect(),
            b2: u(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.n * self.n + 2 * self.n + 1
    }

    pub fn trace(&self, x: &[f32]) -> HeadTrace {
        let n = self.n;
        let mut hidden_pre = self.b1.clone();
        for (o, h) in hidden_pre.iter_mut().enumerate() {
            let row = &self.w1[o * n..(o + 1) * n];
            *h += row.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>();
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let logit = self.b2 + self.w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        HeadTrace {
            hidden_pre,
            hidden,
            out: sigmoid(logit),
        }
    }

    pub fn forward(&self, x: &[f32]) -> f64 {
        self.trace(x).out
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dout`; returns `dL/dx`.
    pub fn backward(&self, x: &[f32], trace: &HeadTrace, dout: f64, grad: &mut HeadGrad) -> Vec<f64> {
        let n = self.n;
        let dlogit = dout * trace.out * (1.0 - trace.out);
        grad.b2 += dlogit;
        let mut dx = vec![0.0; n];
        for o in 0..n {
            grad.w2[o] += dlogit * trace.hidden[o];
            if trace.hidden_pre[o] <= 0.0 {
                continue;
            }
            let dh = dlogit * self.w2[o];
            grad.b1[o] += dh;
            let row = &self.w1[o * n..(o + 1) * n];
            for i in 0..n {
                grad.w1[o * n + i] += dh * x[i] as f64;
                dx[i] += dh * row[i];
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_params(n: usize, p: &[f64]) -> Option<Self> {
        if p.len() != n * n + 2 * n + 1 {
            return None;
        }
        Some(Self {
            n,
            w1: p[..n * n].to_vec(),
            b1: p[n * n..n * n + n].to_vec(),
            w2: p[n * n + n..n * n + 2 * n].to_vec(),
            b2: p[n * n + 2 * n],
        })
    }

    /// `param -= lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grad: &HeadGrad, lr: f64) {
        self.w1.iter_mut().zip(&grad.w1).for_each(|(p, g)| *p -= lr * g);
        self.b1.iter_mut().zip(&grad.b1).for_each(|(p, g)| *p -= lr * g);
        self.w2.iter_mut().zip(&grad.w2).for_each(|(p, g)| *p -= lr * g);
        self.b2 -= lr * grad.b2;
    }
}
