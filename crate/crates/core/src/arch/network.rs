//! Executable inference graph built from an [`ArchitectureSpec`].

use rand::{Rng, SeedableRng};

use super::ghost::{GhostConv, GhostConvSpec};
use super::spec::{conv_unit, resolve, ArchitectureSpec, ConvUnit, LayerKind};
use crate::error::{Error, Result};
use crate::nn::{silu, Conv3d, Param, Tensor};

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv3d,
    act: bool,
}

impl ConvBlock {
    fn new(unit: ConvUnit, rng: &mut impl Rng) -> Result<Self> {
        Ok(ConvBlock {
            conv: Conv3d::new(unit.geom, rng)?,
            act: unit.act,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.infer(x)?;
        Ok(if self.act { y.map(silu) } else { y })
    }
}

#[derive(Debug, Clone)]
enum Pointwise {
    Plain(ConvBlock),
    Ghost(GhostConv),
}

impl Pointwise {
    fn new(cin: usize, cout: usize, ghost: bool, rng: &mut impl Rng) -> Result<Self> {
        Ok(if ghost {
            Pointwise::Ghost(GhostConv::new(GhostConvSpec::with_ratio(cin, cout, 1, 1, 2)?, rng)?)
        } else {
            Pointwise::Plain(ConvBlock::new(conv_unit(cin, cout, 1, 1, None, true), rng)?)
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Pointwise::Plain(c) => c.forward(x),
            Pointwise::Ghost(g) => g.forward(x),
        }
    }
}

#[derive(Debug, Clone)]
enum Bottleneck {
    Plain { cv1: ConvBlock, cv2: ConvBlock, add: bool },
    Ghost { g1: GhostConv, g2: GhostConv },
}

impl Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (mut y, add) = match self {
            Bottleneck::Plain { cv1, cv2, add } => (cv2.forward(&cv1.forward(x)?)?, *add),
            Bottleneck::Ghost { g1, g2 } => (g2.forward(&g1.forward(x)?)?, true),
        };
        if add {
            y.add_assign(x);
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Conv(ConvBlock),
    Ghost(GhostConv),
    C3 {
        cv1: Pointwise,
        cv2: Pointwise,
        blocks: Vec<Bottleneck>,
        cv3: Pointwise,
    },
    Sppf {
        cv1: ConvBlock,
        cv2: ConvBlock,
        kernel: usize,
    },
    Upsample(usize),
    Concat,
    Detect(Vec<ConvBlock>),
}

/// Raw head output of one detection scale: `[N, 3 * (classes + 5), 1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutput {
    pub stride: usize,
    pub anchors: [[f64; 2]; 3],
    pub map: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ArchitectureSpec,
    nodes: Vec<Node>,
}

impl Network {
    /// Randomly initialized network; weights are Kaiming-normal, biases zero.
    pub fn new(spec: &ArchitectureSpec, rng: &mut impl Rng) -> Result<Self> {
        // A probe size divisible by every stride fixes the channel flow.
        let shapes = spec.infer_shapes(64, 64)?;
        let mut nodes = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_ch = |k: usize| -> Result<usize> {
                Ok(match resolve(i, layer.from[k])? {
                    Some(j) => shapes[j].channels,
                    None => spec.input_channels,
                })
            };
            let cin = in_ch(0)?;
            let node = match &layer.kind {
                LayerKind::Conv {
                    out,
                    kernel,
                    stride,
                    padding,
                } => Node::Conv(ConvBlock::new(conv_unit(cin, *out, *kernel, *stride, *padding, true), rng)?),
                LayerKind::GhostConv {
                    out,
                    kernel,
                    stride,
                    act,
                } => Node::Ghost(GhostConv::new(
                    GhostConvSpec::with_ratio(cin, *out, *kernel, *stride, 2)?.activation(*act),
                    rng,
                )?),
                LayerKind::C3 {
                    out,
                    bottlenecks,
                    shortcut,
                    ghost,
                    ghost_outer,
                } => {
                    let hidden = out / 2;
                    let mut blocks = Vec::with_capacity(*bottlenecks);
                    for _ in 0..*bottlenecks {
                        blocks.push(if *ghost {
                            let mid = hidden / 2;
                            Bottleneck::Ghost {
                                g1: GhostConv::new(GhostConvSpec::with_ratio(hidden, mid, 1, 1, 2)?, rng)?,
                                g2: GhostConv::new(
                                    GhostConvSpec::with_ratio(mid, hidden, 1, 1, 2)?.activation(false),
                                    rng,
                                )?,
                            }
                        } else {
                            Bottleneck::Plain {
                                cv1: ConvBlock::new(conv_unit(hidden, hidden, 1, 1, None, true), rng)?,
                                cv2: ConvBlock::new(conv_unit(hidden, hidden, 3, 1, None, true), rng)?,
                                add: *shortcut,
                            }
                        });
                    }
                    Node::C3 {
                        cv1: Pointwise::new(cin, hidden, *ghost_outer, rng)?,
                        cv2: Pointwise::new(cin, hidden, *ghost_outer, rng)?,
                        blocks,
                        cv3: Pointwise::new(2 * hidden, *out, *ghost_outer, rng)?,
                    }
                }
                LayerKind::Sppf { out, kernel } => {
                    let hidden = cin / 2;
                    Node::Sppf {
                        cv1: ConvBlock::new(conv_unit(cin, hidden, 1, 1, None, true), rng)?,
                        cv2: ConvBlock::new(conv_unit(4 * hidden, *out, 1, 1, None, true), rng)?,
                        kernel: *kernel,
                    }
                }
                LayerKind::Upsample { scale } => Node::Upsample(*scale),
                LayerKind::Concat => Node::Concat,
                LayerKind::Detect { num_classes, .. } => {
                    let outputs = 3 * (num_classes + 5);
                    let heads = (0..layer.from.len())
                        .map(|k| ConvBlock::new(conv_unit(in_ch(k)?, outputs, 1, 1, None, false), rng))
                        .collect::<Result<Vec<_>>>()?;
                    Node::Detect(heads)
                }
            };
            nodes.push(node);
        }
        Ok(Network {
            spec: spec.clone(),
            nodes,
        })
    }

    /// Visits every weight in layer order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        fn conv(c: &mut ConvBlock, f: &mut dyn FnMut(&mut Param)) {
            f(&mut c.conv.weight);
            if let Some(b) = &mut c.conv.bias {
                f(b);
            }
        }
        fn point(p: &mut Pointwise, f: &mut dyn FnMut(&mut Param)) {
            match p {
                Pointwise::Plain(c) => conv(c, f),
                Pointwise::Ghost(g) => g.visit_params(f),
            }
        }
        for node in &mut self.nodes {
            match node {
                Node::Conv(c) => conv(c, f),
                Node::Ghost(g) => g.visit_params(f),
                Node::C3 { cv1, cv2, blocks, cv3 } => {
                    point(cv1, f);
                    point(cv2, f);
                    for b in blocks {
                        match b {
                            Bottleneck::Plain { cv1, cv2, .. } => {
                                conv(cv1, f);
                                conv(cv2, f);
                            }
                            Bottleneck::Ghost { g1, g2 } => {
                                g1.visit_params(f);
                                g2.visit_params(f);
                            }
                        }
                    }
                    point(cv3, f);
                }
                Node::Sppf { cv1, cv2, .. } => {
                    conv(cv1, f);
                    conv(cv2, f);
                }
                Node::Detect(heads) => heads.iter_mut().for_each(|h| conv(h, f)),
                Node::Upsample(_) | Node::Concat => {}
            }
        }
    }

    /// Number of weights actually allocated.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Runs the graph on `[N, C, 1, H, W]` and returns the detection-head maps.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<ScaleOutput>> {
        let [_, c, t, h, w] = x.shape();
        if c != self.spec.input_channels || t != 1 {
            return Err(Error::Shape(format!(
                "network expects [N, {}, 1, H, W], got {:?}",
                self.spec.input_channels,
                x.shape()
            )));
        }
        let shapes = self.spec.infer_shapes(h, w)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut heads = Vec::new();
        for (i, (node, layer)) in self.nodes.iter().zip(&self.spec.layers).enumerate() {
            let inputs: Vec<&Tensor> = layer
                .from
                .iter()
                .map(|&f| resolve(i, f).map(|j| j.map_or(x, |j| &outs[j])))
                .collect::<Result<_>>()?;
            let y = match node {
                Node::Conv(cb) => cb.forward(inputs[0])?,
                Node::Ghost(g) => g.forward(inputs[0])?,
                Node::C3 { cv1, cv2, blocks, cv3 } => {
                    let mut a = cv1.forward(inputs[0])?;
                    for b in blocks {
                        a = b.forward(&a)?;
                    }
                    let bb = cv2.forward(inputs[0])?;
                    cv3.forward(&Tensor::concat_channels(&[&a, &bb])?)?
                }
                Node::Sppf { cv1, cv2, kernel } => {
                    let a = cv1.forward(inputs[0])?;
                    let p1 = max_pool_same(&a, *kernel);
                    let p2 = max_pool_same(&p1, *kernel);
                    let p3 = max_pool_same(&p2, *kernel);
                    cv2.forward(&Tensor::concat_channels(&[&a, &p1, &p2, &p3])?)?
                }
                Node::Upsample(s) => upsample_nearest(inputs[0], *s),
                Node::Concat => Tensor::concat_channels(&inputs)?,
                Node::Detect(convs) => {
                    let LayerKind::Detect { anchors, .. } = &layer.kind else {
                        unreachable!()
                    };
                    for (k, cb) in convs.iter().enumerate() {
                        let src = resolve(i, layer.from[k])?.expect("detect reads a layer");
                        heads.push(ScaleOutput {
                            stride: shapes[src].stride,
                            anchors: anchors[k],
                            map: cb.forward(inputs[k])?,
                        });
                    }
                    // Keep an entry so later indices stay aligned.
                    Tensor::zeros([0, 0, 0, 0, 0])
                }
            };
            outs.push(y);
        }
        Ok(heads)
    }
}

/// Stride-1 max pooling with "same" padding; padding never wins.
fn max_pool_same(x: &Tensor, k: usize) -> Tensor {
    let [n, c, t, h, w] = x.shape();
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c * t {
        let base = plane * h * w;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut m = f32::NEG_INFINITY;
                for di in -r..=r {
                    let y = i + di;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dj in -r..=r {
                        let xx = j + dj;
                        if xx >= 0 && xx < w as isize {
                            m = m.max(src[base + y as usize * w + xx as usize]);
                        }
                    }
                }
                dst[base + i as usize * w + j as usize] = m;
            }
        }
    }
    out
}

fn upsample_nearest(x: &Tensor, s: usize) -> Tensor {
    let [n, c, t, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, t, h * s, w * s]);
    let (src, dst) = (x.data(), out.data_mut());
    for plane in 0..n * c * t {
        for i in 0..h * s {
            for j in 0..w * s {
                dst[plane * h * w * s * s + i * w * s + j] = src[plane * h * w + (i / s) * w + j / s];
            }
        }
    }
    out
}

const WEIGHTS_MAGIC: &[u8; 8] = b"SMKYOLO1";

#[derive(serde::Serialize, serde::Deserialize)]
struct WeightsHeader {
    arch: ArchitectureSpec,
    tensors: Vec<usize>,
}

impl Network {
    /// Architecture and weights: the magic `SMKYOLO1`, a little-endian `u32`
    /// header length, a JSON header, then every weight as little-endian `f32`.
    pub fn to_bytes(&mut self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut values = Vec::new();
        self.visit_params(&mut |p| {
            tensors.push(p.len());
            values.extend(p.value.iter().flat_map(|v| v.to_le_bytes()));
        });
        let header = serde_json::to_vec(&WeightsHeader {
            arch: self.spec.clone(),
            tensors,
        })
        .expect("header serialization");
        let mut out = Vec::with_capacity(12 + header.len() + values.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != WEIGHTS_MAGIC {
            return Err(Error::Validation("not a detector weights file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Validation("truncated weights header".into()))?;
        let header: WeightsHeader =
            serde_json::from_slice(body).map_err(|e| Error::Validation(format!("weights header: {e}")))?;
        let payload = &bytes[12 + hlen..];
        if payload.len() != 4 * header.tensors.iter().sum::<usize>() {
            return Err(Error::Validation("weights payload size does not match its header".into()));
        }
        let mut net = Network::new(&header.arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let mut data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut lens = header.tensors.iter();
        let mut mismatch = false;
        net.visit_params(&mut |p| match lens.next() {
            Some(&n) if n == p.len() => p.value.iter_mut().for_each(|v| *v = data.next().expect("size checked")),
            _ => mismatch = true,
        });
        if mismatch || lens.next().is_some() {
            return Err(Error::Validation("weights do not match the architecture".into()));
        }
        Ok(net)
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}
