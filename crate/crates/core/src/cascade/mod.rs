//! The coarse-to-fine cascade: a cheap smoke detector proposes regions,
//! smoke-vehicle matching discards smoke with no vehicle to emit it, and a
//! clip classifier rejects what still looks wrong over time.

mod config;
mod pipeline;
mod render;

pub use config::{CascadeConfig, DetectorConfig, DetectorKind, NoiseConfig};
pub use pipeline::{
    build_detector, build_state, collect_training_clips, open_video, process_video, read_verdicts, run_files,
    run_video, verdict_video_id, write_run, CascadeState, FrameOutcome, FrameVerdict, Refiner, RunFiles,
    SmokeVehiclePair, VideoInput, VideoRun, DETECTIONS_SUFFIX, VERDICTS_SUFFIX,
};
pub use render::{render_overlays, DROPPED_COLOR, SURVIVOR_COLOR};
