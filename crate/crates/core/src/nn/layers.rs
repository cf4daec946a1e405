use rand::Rng;

use super::conv::gemm;
use super::param::{Param, ParamKind};
use super::tensor::Tensor;
use super::Layer;
use crate::error::{Error, Result};

/// Batch normalization over `N, T, H, W` for each channel.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(ParamKind::Bias, channels, 1.0),
            beta: Param::filled(ParamKind::Bias, channels, 0.0),
            running_mean: Param::filled(ParamKind::Buffer, channels, 0.0),
            running_var: Param::filled(ParamKind::Buffer, channels, 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` applied in inference mode.
    pub fn inference_affine(&self) -> Vec<(f32, f32)> {
        (0..self.channels())
            .map(|c| {
                let s = self.gamma.value[c] / (self.running_var.value[c] + self.eps).sqrt();
                (s, self.beta.value[c] - s * self.running_mean.value[c])
            })
            .collect()
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.channels();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {c}",
                self.channels()
            )));
        }
        let n = x.batch();
        let vol = x.volume();
        let mut out = x.clone();
        if !train {
            let aff = self.inference_affine();
            for b in 0..n {
                let item = out.item_mut(b);
                for (ch, &(s, t)) in aff.iter().enumerate() {
                    item[ch * vol..(ch + 1) * vol].iter_mut().for_each(|v| *v = *v * s + t);
                }
            }
            self.cache = None;
            return Ok(out);
        }

        let m = (n * vol) as f64;
        let mut inv_std = vec![0f32; c];
        for ch in 0..c {
            let mut sum = 0f64;
            for b in 0..n {
                sum += x.item(b)[ch * vol..(ch + 1) * vol].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / m;
            let mut var = 0f64;
            for b in 0..n {
                var += x.item(b)[ch * vol..(ch + 1) * vol]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            var /= m;
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mom = self.momentum;
            self.running_mean.value[ch] = (1.0 - mom) * self.running_mean.value[ch] + mom * mean as f32;
            self.running_var.value[ch] = (1.0 - mom) * self.running_var.value[ch] + mom * unbiased as f32;
            inv_std[ch] = (1.0 / (var + self.eps as f64).sqrt()) as f32;
            for b in 0..n {
                for v in out.item_mut(b)[ch * vol..(ch + 1) * vol].iter_mut() {
                    *v = (*v - mean as f32) * inv_std[ch];
                }
            }
        }
        let xhat = out.clone();
        for b in 0..n {
            let item = out.item_mut(b);
            for ch in 0..c {
                let (g, be) = (self.gamma.value[ch], self.beta.value[ch]);
                item[ch * vol..(ch + 1) * vol].iter_mut().for_each(|v| *v = *v * g + be);
            }
        }
        self.cache = Some((xhat, inv_std));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("backward without training forward");
        let n = grad.batch();
        let c = grad.channels();
        let vol = grad.volume();
        let m = (n * vol) as f32;
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0f32, 0f32);
            for b in 0..n {
                let g = &grad.item(b)[ch * vol..(ch + 1) * vol];
                let xh = &xhat.item(b)[ch * vol..(ch + 1) * vol];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_dy += gv;
                    sum_dy_xhat += gv * xv;
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let k = self.gamma.value[ch] * inv_std[ch] / m;
            for b in 0..n {
                let g = &grad.item(b)[ch * vol..(ch + 1) * vol];
                let xh = &xhat.item(b)[ch * vol..(ch + 1) * vol];
                let d = &mut dx.item_mut(b)[ch * vol..(ch + 1) * vol];
                for ((dv, &gv), &xv) in d.iter_mut().zip(g).zip(xh) {
                    *dv = k * (m * gv - sum_dy - xv * sum_dy_xhat);
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if train {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        Ok(x.map(|v| v.max(0.0)))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("backward without training forward");
        let mut dx = grad.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Spatial max pooling applied to every frame; padding never wins.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<([usize; 5], Vec<usize>)>,
}

impl MaxPool {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }
}

impl Layer for MaxPool {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let [n, c, t, h, w] = x.shape();
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(format!("pool kernel {} exceeds {h}x{w}", self.kernel)));
        }
        let (oh, ow) = self.output_hw(h, w);
        let mut out = Tensor::zeros([n, c, t, oh, ow]);
        let mut arg = Vec::with_capacity(if train { out.data().len() } else { 0 });
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        let xd = x.data();
        let od = out.data_mut();
        let mut oi = 0;
        for plane in 0..n * c * t {
            let base = plane * h * w;
            for y in 0..oh as isize {
                for xo in 0..ow as isize {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base;
                    for dy in 0..k {
                        let yi = y * s + dy - p;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let xi = xo * s + dx - p;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let idx = base + yi as usize * w + xi as usize;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    od[oi] = best;
                    oi += 1;
                    if train {
                        arg.push(best_i);
                    }
                }
            }
        }
        self.cache = train.then(|| (x.shape(), arg));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("backward without training forward");
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad.data()) {
            d[i] += g;
        }
        dx
    }
}

/// Averages over `H, W`, producing `[N, C, T, 1, 1]`.
#[derive(Debug, Clone, Default)]
pub struct SpatialAvgPool {
    shape: Option<[usize; 5]>,
}

impl Layer for SpatialAvgPool {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let [n, c, t, h, w] = x.shape();
        let plane = h * w;
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f32>() / plane as f32)
            .collect();
        self.shape = train.then_some(x.shape());
        Tensor::from_vec([n, c, t, 1, 1], data)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.shape.take().expect("backward without training forward");
        let plane = shape[3] * shape[4];
        let mut dx = Tensor::zeros(shape);
        for (chunk, &g) in dx.data_mut().chunks_mut(plane).zip(grad.data()) {
            chunk.iter_mut().for_each(|v| *v = g / plane as f32);
        }
        dx
    }
}

/// Averages over `T`, producing `[N, C, 1, H, W]`.
#[derive(Debug, Clone, Default)]
pub struct TemporalMean {
    shape: Option<[usize; 5]>,
}

impl Layer for TemporalMean {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let [n, c, t, h, w] = x.shape();
        let plane = h * w;
        let mut out = Tensor::zeros([n, c, 1, h, w]);
        let od = out.data_mut();
        let mut column = Vec::with_capacity(t);
        for (nc, block) in x.data().chunks(t * plane).enumerate() {
            for i in 0..plane {
                // Summing in sorted order makes the result independent of frame order.
                column.clear();
                column.extend((0..t).map(|f| block[f * plane + i]));
                column.sort_by(f32::total_cmp);
                od[nc * plane + i] = column.iter().sum::<f32>() / t as f32;
            }
        }
        self.shape = train.then_some(x.shape());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.shape.take().expect("backward without training forward");
        let t = shape[2];
        let plane = shape[3] * shape[4];
        let mut dx = Tensor::zeros(shape);
        let gd = grad.data();
        for (nc, block) in dx.data_mut().chunks_mut(t * plane).enumerate() {
            for f in 0..t {
                for i in 0..plane {
                    block[f * plane + i] = gd[nc * plane + i] / t as f32;
                }
            }
        }
        dx
    }
}

/// Fully connected layer over the flattened item, producing `[N, out, 1, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Param::uniform(ParamKind::Weight, in_features * out_features, bound, rng),
            bias: Param::uniform(ParamKind::Bias, out_features, bound, rng),
            input: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.item_len() != self.in_features {
            return Err(Error::Shape(format!(
                "linear layer expects {} features, got {}",
                self.in_features,
                x.item_len()
            )));
        }
        let n = x.batch();
        let mut out = Tensor::zeros([n, self.out_features, 1, 1, 1]);
        for b in 0..n {
            out.item_mut(b).copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            &self.weight.value,
            true,
            out.data_mut(),
            1.0,
        );
        self.input = train.then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without training forward");
        let n = x.batch();
        for b in 0..n {
            for (bg, g) in self.bias.grad.iter_mut().zip(grad.item(b)) {
                *bg += g;
            }
        }
        gemm(
            self.out_features,
            n,
            self.in_features,
            grad.data(),
            true,
            x.data(),
            false,
            &mut self.weight.grad,
            1.0,
        );
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.out_features,
            self.in_features,
            grad.data(),
            false,
            &self.weight.value,
            false,
            dx.data_mut(),
            0.0,
        );
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Row-wise softmax of `[N, K, 1, 1, 1]` logits.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.batch())
        .map(|b| {
            let row = logits.item(b);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let probs = softmax(logits);
    let n = logits.batch();
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (b, (p, &t)) in probs.iter().zip(targets).enumerate() {
        loss -= p[t].max(1e-12).ln();
        for (k, g) in grad.item_mut(b).iter_mut().enumerate() {
            let onehot = if k == t { 1.0 } else { 0.0 };
            *g = ((p[k] - onehot) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}
