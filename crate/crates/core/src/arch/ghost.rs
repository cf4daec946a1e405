//! Ghost convolution: a few ordinary feature maps plus cheap linear
//! depth-wise "ghosts" of them.

use rand::Rng;

use super::spec::GHOST_CHEAP_KERNEL;
use crate::error::{Error, Result};
use crate::nn::{silu, Conv3d, ConvGeometry, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostConvSpec {
    pub in_channels: usize,
    /// `n`, the total output width.
    pub out_channels: usize,
    /// `m`, maps produced by the ordinary convolution.
    pub primary_channels: usize,
    /// `s = n - m`, maps produced by the depth-wise path.
    pub ghost_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub primary_activation: bool,
    pub cheap_kernel: usize,
}

impl GhostConvSpec {
    /// Explicit split into `m` primary and `n - m` ghost maps.
    pub fn new(in_channels: usize, out_channels: usize, primary_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        let spec = GhostConvSpec {
            in_channels,
            out_channels,
            primary_channels,
            ghost_channels: out_channels.saturating_sub(primary_channels),
            kernel,
            stride,
            primary_activation: true,
            cheap_kernel: GHOST_CHEAP_KERNEL,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Split with `m = n / ratio`.
    pub fn with_ratio(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, ratio: usize) -> Result<Self> {
        if ratio < 2 || !out_channels.is_multiple_of(ratio) {
            return Err(Error::Validation(format!(
                "ghost ratio {ratio} does not divide {out_channels} output channels"
            )));
        }
        Self::new(in_channels, out_channels, out_channels / ratio, kernel, stride)
    }

    pub fn activation(mut self, on: bool) -> Self {
        self.primary_activation = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, s) = (self.out_channels, self.primary_channels, self.ghost_channels);
        if self.in_channels == 0 || m == 0 || m >= n || m + s != n {
            return Err(Error::Validation(format!(
                "ghost split m={m}, s={s}, n={n} needs 1 <= m < n and m + s = n"
            )));
        }
        if s % m != 0 {
            return Err(Error::Validation(format!(
                "ghost maps s={s} must be a multiple of primary maps m={m}"
            )));
        }
        if self.kernel == 0 || self.stride == 0 || self.cheap_kernel.is_multiple_of(2) {
            return Err(Error::Validation("ghost kernel sizes must be positive and the cheap kernel odd".into()));
        }
        Ok(())
    }

    /// Ordinary convolution with folded-normalization bias.
    pub fn primary_geometry(&self) -> ConvGeometry {
        ConvGeometry::conv2d(self.in_channels, self.primary_channels, self.kernel, self.stride)
    }

    /// Depth-wise linear convolution over the primary maps.
    pub fn cheap_geometry(&self) -> ConvGeometry {
        ConvGeometry::conv2d(self.primary_channels, self.ghost_channels, self.cheap_kernel, 1)
            .with_groups(self.primary_channels)
            .with_bias(false)
    }

    pub fn param_count(&self) -> usize {
        self.primary_geometry().param_count() + self.cheap_geometry().param_count()
    }

    /// Parameters of the ordinary convolution this block replaces.
    pub fn standard_param_count(&self) -> usize {
        ConvGeometry::conv2d(self.in_channels, self.out_channels, self.kernel, self.stride).param_count()
    }

    /// Output `(channels, height, width)` for an input of `height x width`.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let [_, h, w] = self.primary_geometry().output_dims([1, height, width])?;
        Ok((self.out_channels, h, w))
    }
}

#[derive(Debug, Clone)]
pub struct GhostConv {
    pub spec: GhostConvSpec,
    pub primary: Conv3d,
    pub cheap: Conv3d,
}

impl GhostConv {
    pub fn new(spec: GhostConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        Ok(GhostConv {
            primary: Conv3d::new(spec.primary_geometry(), rng)?,
            cheap: Conv3d::new(spec.cheap_geometry(), rng)?,
            spec,
        })
    }

    /// The `m` primary maps, activated when `primary_activation` is set.
    pub fn primary_maps(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.primary.infer(x)?;
        Ok(if self.spec.primary_activation { p.map(silu) } else { p })
    }

    /// The `s` ghost maps computed from given primary maps.
    pub fn ghost_path(&self, primary: &Tensor) -> Result<Tensor> {
        self.cheap.infer(primary)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "ghost conv expects {} input channels, got {}",
                self.spec.in_channels,
                x.channels()
            )));
        }
        let p = self.primary_maps(x)?;
        let g = self.ghost_path(&p)?;
        Tensor::concat_channels(&[&p, &g])
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.primary.weight);
        if let Some(b) = &mut self.primary.bias {
            f(b);
        }
        f(&mut self.cheap.weight);
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}
