//! Spatio-temporal refinement: square `K`-frame clips around detections and
//! the residual classifiers that accept or reject them.

mod clip;
mod model;
mod store;
mod train;

pub use clip::{
    crop_resize, extend_to_square, extract_clip, extract_clip_sized, patches_to_tensor, ClipConfig,
    ClipLabel, ClipSample, FrameBuffer, SquareRegion, PATCH_MEAN, PATCH_STD,
};
pub use model::{build_head, HeadVariant, Sequential, TemporalClassifier, TemporalHeadSpec, NUM_CLASSES};
pub use store::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, read_clip_dataset, save_checkpoint,
    write_clip_dataset, ClipRecord, CLIPS_FILE,
};
pub use train::{
    classify_clip, eval_tensor, smoke_probabilities, train_head, ClipVerdict, EpochStats,
    TrainConfig, TrainHistory, DEFAULT_REFINE_THRESHOLD,
};
