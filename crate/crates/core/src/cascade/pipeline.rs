//! Per-frame cascade: smoke detection, smoke-vehicle matching, clip refinement.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{CascadeConfig, DetectorConfig, DetectorKind};
use crate::annotations::{
    load_segment_annotations, read_jsonl, write_detection_stream, write_jsonl, BoundingBox, Category, FrameTruth,
    ScoredDetection, VideoSegments,
};
use crate::arch::{
    ClassMap, DetectorHandle, LayerKind, Network, NoisyDetector, OracleDetector, OracleRole,
    YoloDetector,
};
use crate::error::{Error, Result};
use crate::geometry::{match_smoke_to_vehicles, MatchResult, MatchRule};
use crate::refiner::{
    extract_clip, extract_clip_sized, load_checkpoint, smoke_probabilities, ClipConfig, ClipLabel, ClipSample,
    FrameBuffer, TemporalClassifier,
};
use crate::video::{load_truth, Frame, FrameDirSource, VideoSource, SEGMENTS_FILE, TRUTH_FILE};

pub const VERDICTS_SUFFIX: &str = ".verdicts.jsonl";
pub const DETECTIONS_SUFFIX: &str = ".detections.jsonl";

/// A smoke detection that survived every enabled stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeVehiclePair {
    pub smoke: BoundingBox,
    pub smoke_score: f64,
    pub vehicle: Option<BoundingBox>,
    pub vehicle_score: Option<f64>,
    pub vehicle_category: Option<Category>,
    pub rule: MatchRule,
    /// Smoke probability from the refiner, absent when it did not run.
    pub probability: Option<f64>,
}

impl SmokeVehiclePair {
    fn new(m: &MatchResult, probability: Option<f64>) -> Self {
        SmokeVehiclePair {
            smoke: m.smoke.bbox,
            smoke_score: m.smoke.score,
            vehicle: m.vehicle.map(|v| v.bbox),
            vehicle_score: m.vehicle.map(|v| v.score),
            vehicle_category: m.vehicle.map(|v| v.category),
            rule: m.rule,
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub frame: u64,
    pub verdict: bool,
    pub pairs: Vec<SmokeVehiclePair>,
    pub dropped_by_matching: usize,
    pub dropped_by_refiner: usize,
}

impl FrameVerdict {
    /// Smoke detections that entered the cascade on this frame.
    pub fn raw_count(&self) -> usize {
        self.pairs.len() + self.dropped_by_matching + self.dropped_by_refiner
    }
}

/// A trained clip classifier with the clip settings it was trained on.
pub struct Refiner {
    pub model: TemporalClassifier,
    pub clip: ClipConfig,
}

impl Refiner {
    pub fn new(model: TemporalClassifier, clip: ClipConfig) -> Self {
        Refiner { model, clip }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, clip) = load_checkpoint(path)?;
        Ok(Refiner { model, clip })
    }
}

/// Everything the cascade saw and decided on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub verdict: FrameVerdict,
    pub smoke: Vec<ScoredDetection>,
    pub vehicles: Vec<ScoredDetection>,
}

/// Cascade state of one video stream.
pub struct CascadeState {
    config: CascadeConfig,
    video_id: String,
    smoke: DetectorHandle,
    vehicle: DetectorHandle,
    refiner: Option<Refiner>,
    buffer: FrameBuffer,
    vehicle_invocations: u64,
}

impl std::fmt::Debug for CascadeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CascadeState")
            .field("video_id", &self.video_id)
            .field("smoke", &self.smoke)
            .field("vehicle", &self.vehicle)
            .field("refiner", &self.refiner.as_ref().map(|r| r.model.spec))
            .field("vehicle_invocations", &self.vehicle_invocations)
            .finish()
    }
}

impl CascadeState {
    /// Checks the configuration against the refiner before any frame is seen.
    pub fn new(
        config: CascadeConfig,
        video_id: impl Into<String>,
        mut smoke: DetectorHandle,
        mut vehicle: DetectorHandle,
        refiner: Option<Refiner>,
    ) -> Result<Self> {
        config.validate()?;
        match &refiner {
            None if config.refiner_enabled => {
                return Err(Error::Config("the refiner stage is enabled but no refiner was loaded".into()));
            }
            Some(r) if r.clip.k != config.clip.k || r.model.spec.k != config.clip.k => {
                return Err(Error::Config(format!(
                    "refiner checkpoint uses K={} but the cascade is configured for K={}",
                    r.model.spec.k, config.clip.k
                )));
            }
            _ => {}
        }
        smoke.threshold = config.smoke_threshold;
        smoke.nms_iou = config.nms_iou;
        vehicle.threshold = config.vehicle_threshold;
        vehicle.nms_iou = config.nms_iou;
        let buffer = FrameBuffer::new(config.clip.k);
        Ok(CascadeState {
            config,
            video_id: video_id.into(),
            smoke,
            vehicle,
            refiner,
            buffer,
            vehicle_invocations: 0,
        })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    /// Frames on which the vehicle detector ran.
    pub fn vehicle_invocations(&self) -> u64 {
        self.vehicle_invocations
    }

    /// Buffers `frame` and runs every enabled stage on it.
    pub fn process_frame(&mut self, frame: Frame) -> Result<FrameOutcome> {
        self.buffer.push(frame.clone());
        let smoke = self.smoke.detect(&frame)?;
        let vehicles = if smoke.is_empty() {
            Vec::new()
        } else {
            self.vehicle_invocations += 1;
            self.vehicle.detect(&frame)?
        };

        let mut dropped_by_matching = 0;
        let mut candidates = Vec::with_capacity(smoke.len());
        for s in &smoke {
            let m = match_smoke_to_vehicles(s, &vehicles, &self.config.matching);
            if self.config.matching_enabled && !m.is_matched() {
                dropped_by_matching += 1;
            } else {
                candidates.push(m);
            }
        }

        let mut dropped_by_refiner = 0;
        let mut pairs = Vec::with_capacity(candidates.len());
        match self.refiner.as_mut().filter(|_| self.config.refiner_enabled) {
            Some(r) if !candidates.is_empty() => {
                let clips = candidates
                    .iter()
                    .map(|m| extract_clip(&self.buffer, &m.smoke, &self.video_id, &r.clip))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ClipSample> = clips.iter().collect();
                let probs = smoke_probabilities(&mut r.model, &refs, &r.clip)?;
                for (m, p) in candidates.iter().zip(probs) {
                    if p < self.config.refine_threshold {
                        dropped_by_refiner += 1;
                    } else {
                        pairs.push(SmokeVehiclePair::new(m, Some(p)));
                    }
                }
            }
            _ => pairs.extend(candidates.iter().map(|m| SmokeVehiclePair::new(m, None))),
        }

        Ok(FrameOutcome {
            verdict: FrameVerdict {
                frame: frame.index,
                verdict: !pairs.is_empty(),
                pairs,
                dropped_by_matching,
                dropped_by_refiner,
            },
            smoke,
            vehicles,
        })
    }
}

/// Verdicts of every frame of a video, plus the detection stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRun {
    pub video_id: String,
    pub verdicts: Vec<FrameVerdict>,
    /// Smoke then vehicle detections of each frame, in frame order.
    pub detections: Vec<ScoredDetection>,
    pub vehicle_invocations: u64,
}

pub fn process_video(state: &mut CascadeState, source: &mut dyn VideoSource) -> Result<VideoRun> {
    let mut verdicts = Vec::with_capacity(source.num_frames() as usize);
    let mut detections = Vec::new();
    while let Some(frame) = source.next_frame()? {
        let out = state.process_frame(frame)?;
        detections.extend(out.smoke);
        detections.extend(out.vehicles);
        verdicts.push(out.verdict);
    }
    Ok(VideoRun {
        video_id: state.video_id.clone(),
        verdicts,
        detections,
        vehicle_invocations: state.vehicle_invocations,
    })
}

/// A video directory: numbered frames plus optional annotations.
#[derive(Debug)]
pub struct VideoInput {
    pub source: FrameDirSource,
    pub video_id: String,
    pub segments: Option<VideoSegments>,
    pub truth: Option<Vec<FrameTruth>>,
}

/// Opens a frame directory. The video id is taken from its segment file,
/// falling back to the directory name.
pub fn open_video(dir: &Path) -> Result<VideoInput> {
    let source = FrameDirSource::open(dir)?;
    let seg_path = dir.join(SEGMENTS_FILE);
    let segments = if seg_path.exists() {
        let mut all = load_segment_annotations(&seg_path)?;
        if all.len() > 1 {
            return Err(Error::Validation(format!(
                "{} describes {} videos; expected one",
                seg_path.display(),
                all.len()
            )));
        }
        all.pop()
    } else {
        None
    };
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() { Some(load_truth(&truth_path)?) } else { None };
    let video_id = match &segments {
        Some(s) => s.video_id.clone(),
        None => dir
            .canonicalize()
            .map_err(|e| Error::io(dir, e))?
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into()),
    };
    Ok(VideoInput {
        source,
        video_id,
        segments,
        truth,
    })
}

fn detect_classes(net: &Network) -> usize {
    net.spec
        .layers
        .iter()
        .find_map(|l| match l.kind {
            LayerKind::Detect { num_classes, .. } => Some(num_classes),
            _ => None,
        })
        .unwrap_or(0)
}

/// Builds one stage's detector. Oracle and noisy detectors read the planted
/// ground truth of the video.
pub fn build_detector(
    config: &CascadeConfig,
    stage: &DetectorConfig,
    role: OracleRole,
    truth: Option<&[FrameTruth]>,
) -> Result<DetectorHandle> {
    let (threshold, salt) = match role {
        OracleRole::Smoke => (config.smoke_threshold, 0x5eed_0001),
        OracleRole::Vehicle => (config.vehicle_threshold, 0x5eed_0002),
    };
    let oracle = || -> Result<OracleDetector> {
        let truth = truth.ok_or_else(|| {
            Error::Config(format!("{} detectors need the video's {TRUTH_FILE}", stage.kind))
        })?;
        Ok(OracleDetector::new(role, truth))
    };
    let handle = match stage.kind {
        DetectorKind::Oracle => DetectorHandle::new(oracle()?, threshold),
        DetectorKind::Noisy => {
            let mut noisy = NoisyDetector::new(oracle()?, config.seed ^ salt);
            noisy.jitter = config.noise.jitter;
            noisy.score_sigma = config.noise.score_sigma;
            noisy.miss_rate = config.noise.miss_rate;
            noisy.false_positive_rate = config.noise.false_positive_rate;
            noisy.false_positive_category = match role {
                OracleRole::Smoke => Category::Smoke,
                OracleRole::Vehicle => Category::Car,
            };
            DetectorHandle::new(noisy, threshold)
        }
        DetectorKind::Yolo => {
            let path = stage
                .weights
                .as_ref()
                .ok_or_else(|| Error::Config(format!("a yolo {role:?} detector needs a weights path")))?;
            let net = Network::load(path)?;
            let classes = match role {
                OracleRole::Smoke => ClassMap::Smoke,
                OracleRole::Vehicle if detect_classes(&net) >= 8 => ClassMap::CocoVehicles,
                OracleRole::Vehicle => {
                    ClassMap::Explicit(vec![Some(Category::Car), Some(Category::Bus), Some(Category::Truck)])
                }
            };
            DetectorHandle::new(YoloDetector::new(net, config.detector_input, classes)?, threshold)
        }
    };
    Ok(handle.with_nms_iou(config.nms_iou))
}

/// Loads detectors and, when enabled, the refiner named by `config`.
pub fn build_state(config: &CascadeConfig, input: &VideoInput) -> Result<CascadeState> {
    config.validate()?;
    let truth = input.truth.as_deref();
    let smoke = build_detector(config, &config.smoke_detector, OracleRole::Smoke, truth)?;
    let vehicle = build_detector(config, &config.vehicle_detector, OracleRole::Vehicle, truth)?;
    let refiner = if config.refiner_enabled {
        let path = config
            .refiner_checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("refiner_enabled is set but refiner_checkpoint is missing".into()))?;
        let r = Refiner::load(path)?;
        if r.model.spec.variant != config.refiner {
            return Err(Error::Config(format!(
                "{} holds a {} head but the config expects {}",
                path.display(),
                r.model.spec.variant,
                config.refiner
            )));
        }
        Some(r)
    } else {
        None
    };
    CascadeState::new(config.clone(), input.video_id.clone(), smoke, vehicle, refiner)
}

/// Runs the cascade over a frame directory. Nothing is written.
pub fn run_video(config: &CascadeConfig, dir: &Path) -> Result<VideoRun> {
    let mut input = open_video(dir)?;
    let mut state = build_state(config, &input)?;
    process_video(&mut state, &mut input.source)
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub verdicts: PathBuf,
    pub detections: PathBuf,
}

pub fn run_files(out_dir: &Path, video_id: &str) -> RunFiles {
    RunFiles {
        verdicts: out_dir.join(format!("{video_id}{VERDICTS_SUFFIX}")),
        detections: out_dir.join(format!("{video_id}{DETECTIONS_SUFFIX}")),
    }
}

pub fn write_run(out_dir: &Path, run: &VideoRun) -> Result<RunFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = run_files(out_dir, &run.video_id);
    write_jsonl(&files.verdicts, &run.verdicts)?;
    write_detection_stream(&run.detections, &files.detections)?;
    Ok(files)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<FrameVerdict>> {
    read_jsonl(path)
}

/// Video id encoded in a verdict file name.
pub fn verdict_video_id(path: &Path) -> Option<String> {
    path.file_name()?
        .to_str()?
        .strip_suffix(VERDICTS_SUFFIX)
        .map(str::to_string)
}

/// Training clips from one annotated video: smoke detections at the cascade's
/// smoke threshold that survive matching, cut at `train_resize` and labeled
/// by whether their frame lies in a smoky segment.
pub fn collect_training_clips(config: &CascadeConfig, dir: &Path) -> Result<Vec<ClipSample>> {
    let mut input = open_video(dir)?;
    let labels = input
        .segments
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("{} has no {SEGMENTS_FILE} to label clips", dir.display())))?
        .labels()?;
    let stage_cfg = CascadeConfig {
        refiner_enabled: false,
        matching_enabled: true,
        ..config.clone()
    };
    let mut state = build_state(&stage_cfg, &input)?;
    let clip = config.clip;
    let mut out = Vec::new();
    while let Some(frame) = input.source.next_frame()? {
        let outcome = state.process_frame(frame)?;
        for pair in &outcome.verdict.pairs {
            let det = outcome
                .smoke
                .iter()
                .find(|d| d.bbox == pair.smoke)
                .expect("pairs come from smoke detections");
            let mut sample =
                extract_clip_sized(&state.buffer, det, &input.video_id, clip.k, clip.min_side, clip.train_resize)?;
            sample.label = Some(if labels.is_positive(det.frame_index) {
                ClipLabel::Smoke
            } else {
                ClipLabel::NonSmoke
            });
            out.push(sample);
        }
    }
    Ok(out)
}
