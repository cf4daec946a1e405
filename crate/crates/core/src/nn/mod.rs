//! Minimal CPU tensor and layer toolkit backing the detector and the temporal
//! classifiers.
//!
//! Every layer caches what it needs during a training-mode forward pass and
//! consumes the cache in `backward`, which accumulates parameter gradients and
//! returns the gradient with respect to the layer input. Everything runs on a
//! single thread so results are bitwise reproducible.

mod conv;
mod layers;
mod optim;
mod param;
mod tensor;

pub use conv::{Conv3d, ConvGeometry};
pub use layers::{
    cross_entropy, sigmoid, silu, softmax, BatchNorm, Linear, MaxPool, Relu, SpatialAvgPool,
    TemporalMean,
};
pub use optim::{Sgd, StepSchedule};
pub use param::{Param, ParamKind};
pub use tensor::Tensor;

use crate::error::Result;

pub trait Layer {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor>;

    /// Gradient with respect to the input of the last training-mode forward.
    fn backward(&mut self, grad: &Tensor) -> Tensor;

    /// Visits every persistent tensor (trainable or not) in a fixed order.
    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}
