//! Declarative detector architectures and their analytic compute budget.
//!
//! A spec is a YOLO-style layer list: each layer names the earlier layers it
//! reads (`-1` is the previous layer) and its type. Channel counts flow from
//! the input, so a spec only states output widths.

use serde::{Deserialize, Serialize};

use super::ghost::GhostConvSpec;
use crate::error::{Error, Result};
use crate::nn::ConvGeometry;

/// Default YOLOv5 anchors in pixels for strides 8, 16 and 32.
pub const DEFAULT_ANCHORS: [[[f64; 2]; 3]; 3] = [
    [[10.0, 13.0], [16.0, 30.0], [33.0, 23.0]],
    [[30.0, 61.0], [62.0, 45.0], [59.0, 119.0]],
    [[116.0, 90.0], [156.0, 198.0], [373.0, 326.0]],
];

/// Kernel of the depth-wise "cheap" convolution inside a GhostConv.
pub const GHOST_CHEAP_KERNEL: usize = 5;

fn prev() -> Vec<isize> {
    vec![-1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// Convolution with folded normalization and SiLU.
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        /// Defaults to `kernel / 2`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        padding: Option<usize>,
    },
    GhostConv {
        out: usize,
        kernel: usize,
        stride: usize,
        #[serde(default = "yes")]
        act: bool,
    },
    /// Cross-stage-partial block; `ghost` swaps its bottlenecks for ghost
    /// bottlenecks (which always carry the identity shortcut).
    C3 {
        out: usize,
        bottlenecks: usize,
        #[serde(default = "yes")]
        shortcut: bool,
        #[serde(default)]
        ghost: bool,
        /// Also turn the block's three 1x1 convolutions into GhostConvs.
        #[serde(default)]
        ghost_outer: bool,
    },
    Sppf {
        out: usize,
        #[serde(default = "five")]
        kernel: usize,
    },
    Upsample {
        #[serde(default = "two")]
        scale: usize,
    },
    Concat,
    Detect {
        num_classes: usize,
        anchors: Vec<[[f64; 2]; 3]>,
    },
}

fn yes() -> bool {
    true
}
fn five() -> usize {
    5
}
fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default = "prev")]
    pub from: Vec<isize>,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn seq(kind: LayerKind) -> Self {
        LayerSpec { from: prev(), kind }
    }

    pub fn from(from: Vec<isize>, kind: LayerKind) -> Self {
        LayerSpec { from, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of a layer output for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Cumulative downsampling relative to the network input.
    pub stride: usize,
}

/// Parameter count and multiply-accumulates for one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModelBudget {
    pub parameter_count: u64,
    pub macs: u64,
}

impl ModelBudget {
    /// Floating-point operations, counted as two per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn gflops(&self) -> f64 {
        self.flops() as f64 / 1e9
    }

    pub fn params_millions(&self) -> f64 {
        self.parameter_count as f64 / 1e6
    }
}

impl std::ops::Add for ModelBudget {
    type Output = ModelBudget;
    fn add(self, o: ModelBudget) -> ModelBudget {
        ModelBudget {
            parameter_count: self.parameter_count + o.parameter_count,
            macs: self.macs + o.macs,
        }
    }
}

impl std::ops::AddAssign for ModelBudget {
    fn add_assign(&mut self, o: ModelBudget) {
        *self = *self + o;
    }
}

/// The convolutions a layer expands into, in execution order. Shared by the
/// budget and by the executable network so both count the same thing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvUnit {
    pub geom: ConvGeometry,
    pub act: bool,
}

pub(crate) fn conv_unit(cin: usize, cout: usize, k: usize, s: usize, pad: Option<usize>, act: bool) -> ConvUnit {
    let p = pad.unwrap_or(k / 2);
    ConvUnit {
        geom: ConvGeometry::conv2d(cin, cout, k, s).with_padding([0, p, p]),
        act,
    }
}

pub(crate) fn ghost_units(spec: &GhostConvSpec) -> [ConvUnit; 2] {
    [
        ConvUnit {
            geom: spec.primary_geometry(),
            act: spec.primary_activation,
        },
        ConvUnit {
            geom: spec.cheap_geometry(),
            act: false,
        },
    ]
}

/// Per-layer convolution budget plus the output shape.
fn layer_budget(kind: &LayerKind, inputs: &[FeatureShape]) -> Result<(ModelBudget, FeatureShape)> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Shape("layer without inputs".into()))?;
    let mut budget = ModelBudget::default();
    let mut add = |u: &ConvUnit, h: usize, w: usize| -> Result<(usize, usize)> {
        let [_, oh, ow] = u.geom.output_dims([1, h, w])?;
        budget.parameter_count += u.geom.param_count() as u64;
        budget.macs += u.geom.macs([1, h, w])?;
        Ok((oh, ow))
    };
    let (h, w) = (first.height, first.width);
    let shape = |c: usize, oh: usize, ow: usize| FeatureShape {
        channels: c,
        height: oh,
        width: ow,
        stride: first.stride * h / oh.max(1),
    };
    let out = match kind {
        LayerKind::Conv {
            out,
            kernel,
            stride,
            padding,
        } => {
            let (oh, ow) = add(&conv_unit(first.channels, *out, *kernel, *stride, *padding, true), h, w)?;
            shape(*out, oh, ow)
        }
        LayerKind::GhostConv {
            out,
            kernel,
            stride,
            act,
        } => {
            let g = GhostConvSpec::with_ratio(first.channels, *out, *kernel, *stride, 2)?.activation(*act);
            let [p, c] = ghost_units(&g);
            let (oh, ow) = add(&p, h, w)?;
            add(&c, oh, ow)?;
            shape(*out, oh, ow)
        }
        LayerKind::C3 { .. } => {
            for u in c3_units(kind, first.channels)? {
                add(&u, h, w)?;
            }
            shape(c3_out(kind), h, w)
        }
        LayerKind::Sppf { out, .. } => {
            let hidden = first.channels / 2;
            add(&conv_unit(first.channels, hidden, 1, 1, None, true), h, w)?;
            add(&conv_unit(hidden * 4, *out, 1, 1, None, true), h, w)?;
            shape(*out, h, w)
        }
        LayerKind::Upsample { scale } => FeatureShape {
            channels: first.channels,
            height: h * scale,
            width: w * scale,
            stride: (first.stride / scale).max(1),
        },
        LayerKind::Concat => {
            for s in inputs {
                if (s.height, s.width) != (h, w) {
                    return Err(Error::Shape(format!(
                        "concat of {}x{} with {}x{}",
                        h, w, s.height, s.width
                    )));
                }
            }
            FeatureShape {
                channels: inputs.iter().map(|s| s.channels).sum(),
                ..first
            }
        }
        LayerKind::Detect {
            num_classes,
            anchors,
        } => {
            if anchors.len() != inputs.len() {
                return Err(Error::Shape(format!(
                    "detect head has {} anchor sets for {} inputs",
                    anchors.len(),
                    inputs.len()
                )));
            }
            let outputs = 3 * (num_classes + 5);
            for s in inputs {
                add(&conv_unit(s.channels, outputs, 1, 1, None, false), s.height, s.width)?;
            }
            FeatureShape {
                channels: outputs,
                ..first
            }
        }
    };
    Ok((budget, out))
}

fn c3_out(kind: &LayerKind) -> usize {
    match kind {
        LayerKind::C3 { out, .. } => *out,
        _ => unreachable!(),
    }
}

/// Expansion of a C3 block: two 1x1 entry convolutions, the bottlenecks, and
/// the 1x1 fusion convolution.
pub(crate) fn c3_units(kind: &LayerKind, cin: usize) -> Result<Vec<ConvUnit>> {
    let LayerKind::C3 {
        out,
        bottlenecks,
        ghost,
        ghost_outer,
        ..
    } = kind
    else {
        unreachable!()
    };
    if cin == 0 || *out < 2 {
        return Err(Error::Validation(format!("C3 block {cin} -> {out} too narrow")));
    }
    let hidden = out / 2;
    let pointwise = |a: usize, b: usize| -> Result<Vec<ConvUnit>> {
        if *ghost_outer {
            Ok(ghost_units(&GhostConvSpec::with_ratio(a, b, 1, 1, 2)?).to_vec())
        } else {
            Ok(vec![conv_unit(a, b, 1, 1, None, true)])
        }
    };
    let mut units = pointwise(cin, hidden)?;
    units.extend(pointwise(cin, hidden)?);
    for _ in 0..*bottlenecks {
        if *ghost {
            let mid = hidden / 2;
            units.extend(ghost_units(&GhostConvSpec::with_ratio(hidden, mid, 1, 1, 2)?));
            units.extend(ghost_units(
                &GhostConvSpec::with_ratio(mid, hidden, 1, 1, 2)?.activation(false),
            ));
        } else {
            units.push(conv_unit(hidden, hidden, 1, 1, None, true));
            units.push(conv_unit(hidden, hidden, 3, 1, None, true));
        }
    }
    units.extend(pointwise(2 * hidden, *out)?);
    Ok(units)
}

impl ArchitectureSpec {
    /// Output shape of every layer for an input of `height x width`.
    pub fn infer_shapes(&self, height: usize, width: usize) -> Result<Vec<FeatureShape>> {
        Ok(self.walk(height, width)?.into_iter().map(|(_, s)| s).collect())
    }

    fn walk(&self, height: usize, width: usize) -> Result<Vec<(ModelBudget, FeatureShape)>> {
        if self.input_channels == 0 {
            return Err(Error::Shape("architecture without input channels".into()));
        }
        let input = FeatureShape {
            channels: self.input_channels,
            height,
            width,
            stride: 1,
        };
        let mut out: Vec<(ModelBudget, FeatureShape)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let inputs = layer
                .from
                .iter()
                .map(|&f| resolve(i, f).map(|j| j.map_or(input, |j| out[j].1)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
            let r = layer_budget(&layer.kind, &inputs)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", self.name)))?;
            out.push(r);
        }
        Ok(out)
    }

    /// Shape of the last layer, or of the input for an empty spec.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<FeatureShape> {
        Ok(self.infer_shapes(height, width)?.last().copied().unwrap_or(FeatureShape {
            channels: self.input_channels,
            height,
            width,
            stride: 1,
        }))
    }

    /// Appends a sequential fragment. The fragment's input width must equal
    /// this spec's output width; its relative references are rebased.
    pub fn append(&mut self, fragment: &ArchitectureSpec) -> Result<()> {
        // Any input size divisible by the total stride works for a channel check.
        let out = self.output_shape(256, 256)?;
        if out.channels != fragment.input_channels {
            return Err(Error::Shape(format!(
                "fragment {} expects {} channels, {} produces {}",
                fragment.name, fragment.input_channels, self.name, out.channels
            )));
        }
        let offset = self.layers.len() as isize;
        for (i, l) in fragment.layers.iter().enumerate() {
            let from = l
                .from
                .iter()
                .map(|&f| if f >= 0 { f + offset } else if (i as isize) + f < 0 { offset - 1 } else { f })
                .collect();
            self.layers.push(LayerSpec {
                from,
                kind: l.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn detect_scales(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Detect { .. } => Some(l.from.len()),
                _ => None,
            })
            .sum()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("architecture serialization")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Maps a `from` entry of layer `i` to an absolute index; `None` is the
/// network input.
pub(crate) fn resolve(i: usize, from: isize) -> Result<Option<usize>> {
    let j = if from < 0 { i as isize + from } else { from };
    if j >= i as isize {
        return Err(Error::Shape(format!("reference {from} is not an earlier layer")));
    }
    Ok((j >= 0).then_some(j as usize))
}

/// Analytic parameter count and multiply-accumulates for one
/// `input_size x input_size` image.
pub fn compute_budget(spec: &ArchitectureSpec, input_size: usize) -> Result<ModelBudget> {
    let mut total = ModelBudget::default();
    for (b, _) in spec.walk(input_size, input_size)? {
        total += b;
    }
    Ok(total)
}

/// A single C3 block with GhostConv bottlenecks, as a sequential fragment.
pub fn build_c3ghost(in_channels: usize, out_channels: usize, bottlenecks: usize) -> Result<ArchitectureSpec> {
    if in_channels == 0 || out_channels < 4 || bottlenecks == 0 {
        return Err(Error::Validation(format!(
            "C3Ghost({in_channels}, {out_channels}, n={bottlenecks}) needs positive widths"
        )));
    }
    Ok(ArchitectureSpec {
        name: format!("c3ghost_{in_channels}_{out_channels}"),
        input_channels: in_channels,
        layers: vec![LayerSpec::seq(LayerKind::C3 {
            out: out_channels,
            bottlenecks,
            shortcut: true,
            ghost: true,
            ghost_outer: false,
        })],
    })
}

/// Standard C3 block fragment with plain bottlenecks.
pub fn build_c3(in_channels: usize, out_channels: usize, bottlenecks: usize) -> Result<ArchitectureSpec> {
    let mut spec = build_c3ghost(in_channels, out_channels, bottlenecks)?;
    spec.name = format!("c3_{in_channels}_{out_channels}");
    if let LayerKind::C3 { ghost, .. } = &mut spec.layers[0].kind {
        *ghost = false;
    }
    Ok(spec)
}

/// Options for the YOLOv5 family builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloOptions {
    pub width_multiple: f64,
    /// Bottleneck counts of the four backbone C3 stages.
    pub backbone_depths: [usize; 4],
    pub num_classes: usize,
    pub ghost_bottlenecks: bool,
    /// Also replace the 1x1 convolutions around each C3's bottlenecks.
    pub ghost_outer: bool,
}

impl YoloOptions {
    /// Reference nano model: width 0.25, depth 0.33 of (3, 6, 9, 3).
    pub fn nano(num_classes: usize) -> Self {
        YoloOptions {
            width_multiple: 0.25,
            backbone_depths: [1, 2, 3, 1],
            num_classes,
            ghost_bottlenecks: false,
            ghost_outer: false,
        }
    }

    /// Light-weight smoke detector: nano widths, one bottleneck per C3 and
    /// ghost bottlenecks everywhere.
    pub fn tiny() -> Self {
        YoloOptions {
            width_multiple: 0.25,
            backbone_depths: [1, 1, 1, 1],
            num_classes: 1,
            ghost_bottlenecks: true,
            ghost_outer: false,
        }
    }
}

/// Backbone, FPN/PAN neck and a three-scale detection head in the YOLOv5
/// v6 layout.
pub fn build_yolov5(name: &str, o: &YoloOptions) -> ArchitectureSpec {
    let w = |c: usize| ((c as f64 * o.width_multiple / 8.0).ceil() as usize * 8).max(8);
    let conv = |c: usize, k: usize, s: usize| LayerKind::Conv {
        out: w(c),
        kernel: k,
        stride: s,
        padding: None,
    };
    let c3 = |c: usize, n: usize, shortcut: bool| LayerKind::C3 {
        out: w(c),
        bottlenecks: n,
        shortcut,
        ghost: o.ghost_bottlenecks,
        ghost_outer: o.ghost_outer,
    };
    let d = o.backbone_depths;
    let seq = LayerSpec::seq;
    let layers = vec![
        seq(LayerKind::Conv {
            out: w(64),
            kernel: 6,
            stride: 2,
            padding: Some(2),
        }), // 0 P1/2
        seq(conv(128, 3, 2)),    // 1 P2/4
        seq(c3(128, d[0], true)), // 2
        seq(conv(256, 3, 2)),    // 3 P3/8
        seq(c3(256, d[1], true)), // 4
        seq(conv(512, 3, 2)),    // 5 P4/16
        seq(c3(512, d[2], true)), // 6
        seq(conv(1024, 3, 2)),   // 7 P5/32
        seq(c3(1024, d[3], true)), // 8
        seq(LayerKind::Sppf {
            out: w(1024),
            kernel: 5,
        }), // 9
        seq(conv(512, 1, 1)),    // 10
        seq(LayerKind::Upsample { scale: 2 }),
        LayerSpec::from(vec![-1, 6], LayerKind::Concat),
        seq(c3(512, 1, false)),  // 13
        seq(conv(256, 1, 1)),    // 14
        seq(LayerKind::Upsample { scale: 2 }),
        LayerSpec::from(vec![-1, 4], LayerKind::Concat),
        seq(c3(256, 1, false)),  // 17 P3 out
        seq(conv(256, 3, 2)),
        LayerSpec::from(vec![-1, 14], LayerKind::Concat),
        seq(c3(512, 1, false)),  // 20 P4 out
        seq(conv(512, 3, 2)),
        LayerSpec::from(vec![-1, 10], LayerKind::Concat),
        seq(c3(1024, 1, false)), // 23 P5 out
        LayerSpec::from(
            vec![17, 20, 23],
            LayerKind::Detect {
                num_classes: o.num_classes,
                anchors: DEFAULT_ANCHORS.to_vec(),
            },
        ),
    ];
    ArchitectureSpec {
        name: name.into(),
        input_channels: 3,
        layers,
    }
}

/// The light-weight single-class smoke detector.
pub fn build_yolov5tiny() -> ArchitectureSpec {
    build_yolov5("yolov5tiny", &YoloOptions::tiny())
}

/// Reference nano model with the 80 COCO classes.
pub fn build_yolov5n() -> ArchitectureSpec {
    build_yolov5("yolov5n", &YoloOptions::nano(80))
}
