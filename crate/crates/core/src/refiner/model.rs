//! Residual clip classifiers: 3-D convolutions before or after a
//! ResNet-18 layout backbone, plus frame-averaging and frame-concatenating
//! 2-D baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv3d, ConvGeometry, Layer, Linear, MaxPool, Param, Relu, SpatialAvgPool,
    TemporalMean, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// 3-D convolutions in the first residual stage, collapsing time.
    Prefix3d,
    /// Shared per-frame backbone followed by one `K x 3 x 3` convolution.
    Suffix3d,
    /// Per-frame features averaged over time.
    Avg2d,
    /// Per-frame features concatenated over time.
    Cat2d,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 4] = [
        HeadVariant::Prefix3d,
        HeadVariant::Suffix3d,
        HeadVariant::Avg2d,
        HeadVariant::Cat2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::Prefix3d => "prefix3d",
            HeadVariant::Suffix3d => "suffix3d",
            HeadVariant::Avg2d => "avg2d",
            HeadVariant::Cat2d => "cat2d",
        }
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown refiner variant {s:?}")))
    }
}

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalHeadSpec {
    pub variant: HeadVariant,
    /// Temporal extent `K` the model consumes.
    pub k: usize,
    /// Width of the first residual stage; later stages double it.
    pub base_width: usize,
    /// Residual blocks per stage.
    pub blocks: [usize; 4],
}

impl TemporalHeadSpec {
    pub fn new(variant: HeadVariant, k: usize) -> Self {
        TemporalHeadSpec {
            variant,
            k,
            base_width: 64,
            blocks: [2, 2, 2, 2],
        }
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    /// Temporal kernel depths of the first stage's convolutions for the
    /// prefix variant; each is `min(3, frames left)` with no padding.
    fn prefix_kernels(&self) -> Result<Vec<usize>> {
        let convs = 2 * self.blocks[0];
        let mut t = self.k;
        let mut ks = Vec::with_capacity(convs);
        for _ in 0..convs {
            let kt = t.min(3);
            ks.push(kt);
            t -= kt - 1;
        }
        if t != 1 {
            return Err(Error::Config(format!(
                "prefix3d cannot collapse K={} frames with {convs} convolutions of depth 3 (at most {})",
                self.k,
                2 * convs + 1
            )));
        }
        Ok(ks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("temporal extent K must be at least 1".into()));
        }
        if self.base_width == 0 || self.blocks.contains(&0) {
            return Err(Error::Config("backbone widths and block counts must be positive".into()));
        }
        if self.variant == HeadVariant::Prefix3d {
            self.prefix_kernels()?;
        }
        Ok(())
    }
}

/// Convolution without bias followed by batch normalization.
#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv3d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(geom: ConvGeometry, rng: &mut impl Rng) -> Result<Self> {
        Ok(ConvBn {
            bn: BatchNorm::new(geom.out_channels),
            conv: Conv3d::new(geom.with_bias(false), rng)?,
        })
    }
}

impl Layer for ConvBn {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv.forward(x, train)?;
        self.bn.forward(&y, train)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.bn.backward(grad);
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }
}

/// Two 3x3 convolutions with an identity or projection shortcut. When the
/// convolutions consume frames, the shortcut keeps the trailing ones.
#[derive(Debug, Clone)]
struct BasicBlock {
    c1: ConvBn,
    r1: Relu,
    c2: ConvBn,
    down: Option<ConvBn>,
    out: Relu,
    trim: usize,
    in_frames: Option<usize>,
}

impl BasicBlock {
    fn new(cin: usize, cout: usize, stride: usize, kts: [usize; 2], rng: &mut impl Rng) -> Result<Self> {
        let geom = |cin, kt: usize, stride: usize| ConvGeometry {
            kernel: [kt, 3, 3],
            stride: [1, stride, stride],
            padding: [0, 1, 1],
            ..ConvGeometry::conv2d(cin, cout, 3, stride)
        };
        let down = if stride != 1 || cin != cout {
            Some(ConvBn::new(ConvGeometry::conv2d(cin, cout, 1, stride), rng)?)
        } else {
            None
        };
        Ok(BasicBlock {
            c1: ConvBn::new(geom(cin, kts[0], stride), rng)?,
            r1: Relu::default(),
            c2: ConvBn::new(geom(cout, kts[1], 1), rng)?,
            down,
            out: Relu::default(),
            trim: kts[0] + kts[1] - 2,
            in_frames: None,
        })
    }
}

impl Layer for BasicBlock {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let t = x.shape()[2];
        if t <= self.trim {
            return Err(Error::Shape(format!("block consumes {} frames, input has {t}", self.trim + 1)));
        }
        let a = self.c1.forward(x, train)?;
        let a = self.r1.forward(&a, train)?;
        let mut y = self.c2.forward(&a, train)?;
        let kept = if self.trim > 0 { x.slice_time(self.trim, t - self.trim) } else { x.clone() };
        let short = match &mut self.down {
            Some(d) => d.forward(&kept, train)?,
            None => kept,
        };
        y.add_assign(&short);
        self.in_frames = train.then_some(t);
        self.out.forward(&y, train)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let t = self.in_frames.take().expect("backward without training forward");
        let g = self.out.backward(grad);
        let ga = self.c2.backward(&g);
        let ga = self.r1.backward(&ga);
        let mut dx = self.c1.backward(&ga);
        let gs = match &mut self.down {
            Some(d) => d.backward(&g),
            None => g,
        };
        if self.trim > 0 {
            debug_assert_eq!(dx.shape()[2], t);
            dx.add_time_slice(self.trim, &gs);
        } else {
            dx.add_assign(&gs);
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.c1.visit_params(f);
        self.c2.visit_params(f);
        if let Some(d) = &mut self.down {
            d.visit_params(f);
        }
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer + Send>>,
}

impl Sequential {
    pub fn push(&mut self, layer: impl Layer + Send + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = x.clone();
        for l in &mut self.layers {
            y = l.forward(&y, train)?;
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }
}

/// Flattens `[N, C, T, 1, 1]` into `[N, C*T, 1, 1, 1]`.
#[derive(Debug, Clone, Default)]
struct Flatten {
    shape: Option<[usize; 5]>,
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let [n, ..] = x.shape();
        self.shape = train.then_some(x.shape());
        x.clone().reshape([n, x.item_len(), 1, 1, 1])
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.shape.take().expect("backward without training forward");
        grad.clone().reshape(shape).expect("flatten shape")
    }
}

/// A clip classifier producing two logits (non-smoke, smoke).
pub struct TemporalClassifier {
    pub spec: TemporalHeadSpec,
    /// Stem and residual stages.
    pub backbone: Sequential,
    /// Temporal fusion, pooling and the linear classifier.
    pub head: Sequential,
}

impl fmt::Debug for TemporalClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemporalClassifier").field("spec", &self.spec).finish()
    }
}

/// Builds a randomly initialized classifier for `spec`.
pub fn build_head(spec: &TemporalHeadSpec, rng: &mut impl Rng) -> Result<TemporalClassifier> {
    spec.validate()?;
    let w = spec.base_width;
    let mut backbone = Sequential::default();
    backbone.push(ConvBn::new(
        ConvGeometry::conv2d(3, w, 7, 2).with_padding([0, 3, 3]),
        rng,
    )?);
    backbone.push(Relu::default());
    backbone.push(MaxPool::new(3, 2, 1));
    let prefix = match spec.variant {
        HeadVariant::Prefix3d => spec.prefix_kernels()?,
        _ => vec![1; 2 * spec.blocks[0]],
    };
    let mut cin = w;
    for (stage, &nblocks) in spec.blocks.iter().enumerate() {
        let cout = w << stage;
        for b in 0..nblocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let kts = if stage == 0 { [prefix[2 * b], prefix[2 * b + 1]] } else { [1, 1] };
            backbone.push(BasicBlock::new(cin, cout, stride, kts, rng)?);
            cin = cout;
        }
    }
    let mut head = Sequential::default();
    let features = match spec.variant {
        HeadVariant::Suffix3d => {
            head.push(ConvBn::new(
                ConvGeometry {
                    kernel: [spec.k, 3, 3],
                    padding: [0, 1, 1],
                    ..ConvGeometry::conv2d(cin, cin, 3, 1)
                },
                rng,
            )?);
            head.push(Relu::default());
            head.push(SpatialAvgPool::default());
            cin
        }
        HeadVariant::Prefix3d | HeadVariant::Avg2d => {
            head.push(SpatialAvgPool::default());
            head.push(TemporalMean::default());
            cin
        }
        HeadVariant::Cat2d => {
            head.push(SpatialAvgPool::default());
            head.push(Flatten::default());
            cin * spec.k
        }
    };
    head.push(Linear::new(features, NUM_CLASSES, rng));
    Ok(TemporalClassifier {
        spec: *spec,
        backbone,
        head,
    })
}

impl TemporalClassifier {
    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, t, h, w] = x.shape();
        if c != 3 || t != self.spec.k {
            return Err(Error::Shape(format!(
                "{} model with K={} got input {:?}",
                self.spec.variant,
                self.spec.k,
                x.shape()
            )));
        }
        if h < 32 || w < 32 {
            return Err(Error::Shape(format!("clip patches {h}x{w} smaller than 32x32")));
        }
        Ok(())
    }

    /// Logits `[N, 2, 1, 1, 1]` for clips `[N, 3, K, H, W]`.
    pub fn logits(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, false)
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.is_trainable() {
                n += p.len()
            }
        });
        n
    }
}

impl Layer for TemporalClassifier {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let f = self.backbone.forward(x, train)?;
        self.head.forward(&f, train)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.head.backward(grad);
        self.backbone.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.backbone.visit_params(f);
        self.head.visit_params(f);
    }
}
