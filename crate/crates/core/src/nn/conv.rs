//! Grouped 3-D convolution via im2col and SGEMM. A 2-D convolution is the
//! special case with temporal kernel, stride and padding `(1, 1, 0)`.

use rand::Rng;

use super::param::{Param, ParamKind};
use super::tensor::Tensor;
use super::Layer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[t, h, w]`.
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
}

impl ConvGeometry {
    /// Square 2-D convolution with "same" padding `k / 2`.
    pub fn conv2d(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel: [1, k, k],
            stride: [1, stride, stride],
            padding: [0, k / 2, k / 2],
            groups: 1,
            bias: true,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.groups > 0
            && self.in_channels.is_multiple_of(self.groups)
            && self.out_channels.is_multiple_of(self.groups)
            && self.kernel.iter().all(|&k| k > 0)
            && self.stride.iter().all(|&s| s > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("invalid convolution geometry {self:?}")))
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel_volume()
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + if self.bias { self.out_channels } else { 0 }
    }

    /// Output `[t, h, w]` for input `[t, h, w]`.
    pub fn output_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = dims[i] + 2 * self.padding[i];
            if padded < self.kernel[i] {
                return Err(Error::Shape(format!(
                    "kernel {:?} larger than padded input {dims:?}",
                    self.kernel
                )));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }

    /// Multiply-accumulates per batch item for the given input dims.
    pub fn macs(&self, dims: [usize; 3]) -> Result<u64> {
        let [t, h, w] = self.output_dims(dims)?;
        Ok((self.weight_len() * t * h * w) as u64)
    }
}

/// `C = A * B + beta * C` for row-major `A: m x k`, `B: k x n`; either input
/// may be supplied transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub geom: ConvGeometry,
    /// `[out, in / groups, kt, kh, kw]`.
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv3d {
    /// Kaiming-normal (fan-out) initialization, zero bias.
    pub fn new(geom: ConvGeometry, rng: &mut impl Rng) -> Result<Self> {
        geom.validate()?;
        let fan_out = geom.out_channels * geom.kernel_volume();
        let std = (2.0 / fan_out as f32).sqrt();
        Ok(Conv3d {
            weight: Param::normal(ParamKind::Weight, geom.weight_len(), std, rng),
            bias: geom
                .bias
                .then(|| Param::filled(ParamKind::Bias, geom.out_channels, 0.0)),
            geom,
            input: None,
        })
    }

    pub fn from_weights(geom: ConvGeometry, weight: Vec<f32>, bias: Option<Vec<f32>>) -> Result<Self> {
        geom.validate()?;
        if weight.len() != geom.weight_len() || bias.is_some() != geom.bias {
            return Err(Error::Shape("convolution weights do not match geometry".into()));
        }
        if let Some(b) = &bias {
            if b.len() != geom.out_channels {
                return Err(Error::Shape("convolution bias does not match geometry".into()));
            }
        }
        Ok(Conv3d {
            geom,
            weight: Param::new(ParamKind::Weight, weight),
            bias: bias.map(|b| Param::new(ParamKind::Bias, b)),
            input: None,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.geom.kernel == [1, 1, 1] && self.geom.stride == [1, 1, 1] && self.geom.padding == [0, 0, 0]
    }

    fn is_depthwise(&self) -> bool {
        self.geom.groups == self.geom.in_channels && self.geom.groups == self.geom.out_channels
    }

    fn check_input(&self, x: &Tensor) -> Result<[usize; 3]> {
        let [_, c, t, h, w] = x.shape();
        if c != self.geom.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.geom.in_channels
            )));
        }
        self.geom.output_dims([t, h, w])
    }

    /// Inference-mode forward pass; caches nothing.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let out_dims = self.check_input(x)?;
        let g = &self.geom;
        let [n, _, t, h, w] = x.shape();
        let in_dims = [t, h, w];
        let p: usize = out_dims.iter().product();
        let mut out = Tensor::zeros([n, g.out_channels, out_dims[0], out_dims[1], out_dims[2]]);

        if self.is_depthwise() {
            for b in 0..n {
                depthwise_forward(g, &self.weight.value, x.item(b), in_dims, out_dims, out.item_mut(b));
            }
        } else {
            let cg = g.in_channels / g.groups;
            let ocg = g.out_channels / g.groups;
            let kdim = cg * g.kernel_volume();
            let wg_len = ocg * kdim;
            let mut cols = vec![0f32; if self.is_pointwise() { 0 } else { kdim * p }];
            for b in 0..n {
                let xi = x.item(b);
                let oi = out.item_mut(b);
                for grp in 0..g.groups {
                    let wg = &self.weight.value[grp * wg_len..(grp + 1) * wg_len];
                    let og = &mut oi[grp * ocg * p..(grp + 1) * ocg * p];
                    if self.is_pointwise() {
                        let xs = &xi[grp * cg * p..(grp + 1) * cg * p];
                        gemm(ocg, kdim, p, wg, false, xs, false, og, 0.0);
                    } else {
                        im2col(g, xi, grp * cg, cg, in_dims, out_dims, &mut cols);
                        gemm(ocg, kdim, p, wg, false, &cols, false, og, 0.0);
                    }
                }
            }
        }
        if let Some(bias) = &self.bias {
            for b in 0..n {
                let oi = out.item_mut(b);
                for (o, &bv) in bias.value.iter().enumerate() {
                    oi[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Ok(out)
    }
}

impl Layer for Conv3d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let out = self.infer(x)?;
        self.input = train.then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without training forward");
        let g = self.geom;
        let [n, _, t, h, w] = x.shape();
        let in_dims = [t, h, w];
        let [_, _, ot, oh, ow] = grad.shape();
        let out_dims = [ot, oh, ow];
        let p = ot * oh * ow;

        if let Some(bias) = &mut self.bias {
            for b in 0..n {
                let gi = grad.item(b);
                for (o, bg) in bias.grad.iter_mut().enumerate() {
                    *bg += gi[o * p..(o + 1) * p].iter().sum::<f32>();
                }
            }
        }

        let cg = g.in_channels / g.groups;
        let ocg = g.out_channels / g.groups;
        let kdim = cg * g.kernel_volume();
        let wg_len = ocg * kdim;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![0f32; kdim * p];
        let mut dcols = vec![0f32; kdim * p];
        for b in 0..n {
            let xi = x.item(b);
            let gi = grad.item(b);
            for grp in 0..g.groups {
                let gg = &gi[grp * ocg * p..(grp + 1) * ocg * p];
                im2col(&g, xi, grp * cg, cg, in_dims, out_dims, &mut cols);
                let wgrad = &mut self.weight.grad[grp * wg_len..(grp + 1) * wg_len];
                gemm(ocg, p, kdim, gg, false, &cols, true, wgrad, 1.0);
                let wg = &self.weight.value[grp * wg_len..(grp + 1) * wg_len];
                gemm(kdim, ocg, p, wg, true, gg, false, &mut dcols, 0.0);
                col2im(&g, &dcols, grp * cg, cg, in_dims, out_dims, dx.item_mut(b));
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Offset of the input sample for kernel tap `k` at output position `o`, or
/// `None` when it falls in the padding.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k).checked_sub(pad)?;
    (i < len).then_some(i)
}

fn im2col(
    g: &ConvGeometry,
    x: &[f32],
    c0: usize,
    cg: usize,
    [t, h, w]: [usize; 3],
    [ot, oh, ow]: [usize; 3],
    cols: &mut [f32],
) {
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let p = ot * oh * ow;
    let mut row = 0;
    for c in 0..cg {
        let xc = &x[(c0 + c) * t * h * w..(c0 + c + 1) * t * h * w];
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for to in 0..ot {
                        let ti = tap(to, dt, st, pt, t);
                        for ho in 0..oh {
                            let hi = tap(ho, dy, sh, ph, h);
                            match (ti, hi) {
                                (Some(ti), Some(hi)) => {
                                    let base = (ti * h + hi) * w;
                                    for wo in 0..ow {
                                        dst[idx + wo] = match tap(wo, dx, sw, pw, w) {
                                            Some(wi) => xc[base + wi],
                                            None => 0.0,
                                        };
                                    }
                                }
                                _ => dst[idx..idx + ow].iter_mut().for_each(|v| *v = 0.0),
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im(
    g: &ConvGeometry,
    cols: &[f32],
    c0: usize,
    cg: usize,
    [t, h, w]: [usize; 3],
    [ot, oh, ow]: [usize; 3],
    dx_item: &mut [f32],
) {
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let p = ot * oh * ow;
    let mut row = 0;
    for c in 0..cg {
        let xc = &mut dx_item[(c0 + c) * t * h * w..(c0 + c + 1) * t * h * w];
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for to in 0..ot {
                        let ti = tap(to, dt, st, pt, t);
                        for ho in 0..oh {
                            if let (Some(ti), Some(hi)) = (ti, tap(ho, dy, sh, ph, h)) {
                                let base = (ti * h + hi) * w;
                                for wo in 0..ow {
                                    if let Some(wi) = tap(wo, dx, sw, pw, w) {
                                        xc[base + wi] += src[idx + wo];
                                    }
                                }
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn depthwise_forward(
    g: &ConvGeometry,
    weight: &[f32],
    x: &[f32],
    [t, h, w]: [usize; 3],
    [ot, oh, ow]: [usize; 3],
    out: &mut [f32],
) {
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let kv = kt * kh * kw;
    for c in 0..g.in_channels {
        let xc = &x[c * t * h * w..(c + 1) * t * h * w];
        let wc = &weight[c * kv..(c + 1) * kv];
        let oc = &mut out[c * ot * oh * ow..(c + 1) * ot * oh * ow];
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let wv = wc[(dt * kh + dy) * kw + dx];
                    for to in 0..ot {
                        let Some(ti) = tap(to, dt, st, pt, t) else { continue };
                        for ho in 0..oh {
                            let Some(hi) = tap(ho, dy, sh, ph, h) else { continue };
                            let base = (ti * h + hi) * w;
                            let orow = &mut oc[(to * oh + ho) * ow..(to * oh + ho + 1) * ow];
                            for (wo, o) in orow.iter_mut().enumerate() {
                                if let Some(wi) = tap(wo, dx, sw, pw, w) {
                                    *o += wv * xc[base + wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive(conv: &Conv3d, x: &Tensor) -> Tensor {
        let g = conv.geom;
        let [n, _, t, h, w] = x.shape();
        let [ot, oh, ow] = g.output_dims([t, h, w]).unwrap();
        let cg = g.in_channels / g.groups;
        let ocg = g.out_channels / g.groups;
        let [kt, kh, kw] = g.kernel;
        let mut out = Tensor::zeros([n, g.out_channels, ot, oh, ow]);
        let xd = x.data();
        for b in 0..n {
            for o in 0..g.out_channels {
                let grp = o / ocg;
                for to in 0..ot {
                    for ho in 0..oh {
                        for wo in 0..ow {
                            let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                            for c in 0..cg {
                                let ci = grp * cg + c;
                                for dt in 0..kt {
                                    for dy in 0..kh {
                                        for dx in 0..kw {
                                            let ti = (to * g.stride[0] + dt) as isize - g.padding[0] as isize;
                                            let hi = (ho * g.stride[1] + dy) as isize - g.padding[1] as isize;
                                            let wi = (wo * g.stride[2] + dx) as isize - g.padding[2] as isize;
                                            if ti < 0 || hi < 0 || wi < 0 || ti >= t as isize || hi >= h as isize || wi >= w as isize {
                                                continue;
                                            }
                                            let xv = xd[(((b * g.in_channels + ci) * t + ti as usize) * h + hi as usize) * w + wi as usize];
                                            let wv = conv.weight.value[(((o * cg + c) * kt + dt) * kh + dy) * kw + dx];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((b * g.out_channels + o) * ot + to) * oh + ho) * ow + wo] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn geoms() -> Vec<ConvGeometry> {
        vec![
            ConvGeometry::conv2d(3, 4, 3, 1),
            ConvGeometry::conv2d(4, 6, 3, 2),
            ConvGeometry::conv2d(4, 4, 5, 1).with_groups(4).with_bias(false),
            ConvGeometry::conv2d(4, 6, 1, 1).with_groups(2),
            ConvGeometry {
                in_channels: 2,
                out_channels: 3,
                kernel: [3, 3, 3],
                stride: [1, 2, 2],
                padding: [0, 1, 1],
                groups: 1,
                bias: true,
            },
        ]
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in geoms() {
            let mut conv = Conv3d::new(g, &mut rng).unwrap();
            if let Some(b) = &mut conv.bias {
                b.value.iter_mut().for_each(|v| *v = 0.25);
            }
            let t = if g.kernel[0] == 3 { 4 } else { 2 };
            let x = random_tensor([2, g.in_channels, t, 7, 6], &mut rng);
            let got = conv.forward(&x, false).unwrap();
            let want = naive(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{g:?}: {a} vs {b}");
            }
        }
    }

    /// Finite-difference check of input and weight gradients for the loss
    /// `sum(out * r)`, whose gradient w.r.t. `out` is `r`.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in geoms() {
            let mut conv = Conv3d::new(g, &mut rng).unwrap();
            let t = if g.kernel[0] == 3 { 3 } else { 1 };
            let x = random_tensor([2, g.in_channels, t, 5, 5], &mut rng);
            let out = conv.forward(&x, true).unwrap();
            let r = random_tensor(out.shape(), &mut rng);
            let dx = conv.backward(&r);
            let loss = |c: &Conv3d, x: &Tensor| -> f64 {
                naive(c, x).data().iter().zip(r.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
            };
            let eps = 1e-2f32;
            for i in (0..x.data().len()).step_by(7) {
                let mut xp = x.clone();
                xp.data_mut()[i] += eps;
                let mut xm = x.clone();
                xm.data_mut()[i] -= eps;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
                assert!((fd - dx.data()[i] as f64).abs() < 1e-2, "{g:?} dx[{i}]: {fd} vs {}", dx.data()[i]);
            }
            for i in (0..conv.weight.len()).step_by(5) {
                let mut cp = conv.clone();
                cp.weight.value[i] += eps;
                let mut cm = conv.clone();
                cm.weight.value[i] -= eps;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps as f64);
                let an = conv.weight.grad[i] as f64;
                assert!((fd - an).abs() < 1e-2 * (1.0 + fd.abs()), "{g:?} dw[{i}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv3d::new(ConvGeometry::conv2d(3, 4, 3, 1), &mut rng).unwrap();
        let x = Tensor::zeros([1, 2, 1, 4, 4]);
        assert!(matches!(conv.forward(&x, false), Err(Error::Shape(_))));
    }

    #[test]
    fn param_count_formula() {
        // 3*3*3*16 weights + 16 biases
        assert_eq!(ConvGeometry::conv2d(3, 16, 3, 1).param_count(), 448);
    }
}
