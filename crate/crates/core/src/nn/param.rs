use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained, subject to weight decay.
    Weight,
    /// Trained, no weight decay (biases, normalization affine terms).
    Bias,
    /// Persistent state that is not trained (normalization running stats).
    Buffer,
}

/// A flat parameter vector with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub kind: ParamKind,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub velocity: Vec<f32>,
}

impl Param {
    pub fn new(kind: ParamKind, value: Vec<f32>) -> Self {
        let n = value.len();
        Param {
            kind,
            value,
            grad: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn filled(kind: ParamKind, n: usize, v: f32) -> Self {
        Param::new(kind, vec![v; n])
    }

    pub fn normal(kind: ParamKind, n: usize, std: f32, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0f32, std.max(f32::MIN_POSITIVE)).expect("finite std");
        Param::new(kind, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn uniform(kind: ParamKind, n: usize, bound: f32, rng: &mut impl Rng) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Param::new(kind, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
