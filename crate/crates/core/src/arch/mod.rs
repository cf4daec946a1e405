//! Light-weight smoke detector architecture and the frame-detector interface.

mod detector;
mod ghost;
mod network;
mod spec;

pub use detector::{
    decode_scale, nms, run_detector, ClassMap, DetectionModel, DetectorHandle, NoisyDetector,
    OracleDetector, OracleRole, YoloDetector, DEFAULT_NMS_IOU,
};
pub use ghost::{GhostConv, GhostConvSpec};
pub use network::{Network, ScaleOutput};
pub use spec::{
    build_c3, build_c3ghost, build_yolov5, build_yolov5n, build_yolov5tiny, compute_budget,
    ArchitectureSpec, FeatureShape, LayerKind, LayerSpec, ModelBudget, YoloOptions,
    DEFAULT_ANCHORS, GHOST_CHEAP_KERNEL,
};
