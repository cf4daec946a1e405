//! Cascade settings and their flat TOML form.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::DEFAULT_NMS_IOU;
use crate::error::{Error, Result};
use crate::geometry::MatchConfig;
use crate::refiner::{ClipConfig, HeadVariant, DEFAULT_REFINE_THRESHOLD};

/// Where a stage's detections come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Planted ground truth read from the video directory.
    Oracle,
    /// Ground truth with seeded jitter, score noise, misses and spurious boxes.
    Noisy,
    /// A detection network loaded from a weights file.
    Yolo,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Oracle => "oracle",
            DetectorKind::Noisy => "noisy",
            DetectorKind::Yolo => "yolo",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DetectorKind::Oracle),
            "noisy" => Ok(DetectorKind::Noisy),
            "yolo" => Ok(DetectorKind::Yolo),
            other => Err(Error::Config(format!("unknown detector kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub weights: Option<PathBuf>,
}

/// Noise applied by [`DetectorKind::Noisy`] detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub jitter: f64,
    pub score_sigma: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            jitter: 0.05,
            score_sigma: 0.05,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub smoke_threshold: f64,
    pub vehicle_threshold: f64,
    pub nms_iou: f64,
    pub matching: MatchConfig,
    pub clip: ClipConfig,
    pub refine_threshold: f64,
    pub matching_enabled: bool,
    pub refiner_enabled: bool,
    /// Head trained by `train-refiner` when no checkpoint exists yet.
    pub refiner: HeadVariant,
    pub refiner_checkpoint: Option<PathBuf>,
    pub smoke_detector: DetectorConfig,
    pub vehicle_detector: DetectorConfig,
    /// Square network input side for network detectors.
    pub detector_input: u32,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        FlatConfig::default().into_config().expect("defaults are valid")
    }
}

/// On-disk form: one key per setting, every key optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatConfig {
    smoke_threshold: f64,
    vehicle_threshold: f64,
    nms_iou: f64,
    l_dist: f64,
    front_filter: bool,
    min_overlap_iou: f64,
    k: usize,
    min_side: f64,
    train_resize: u32,
    train_crop: u32,
    eval_size: u32,
    refine_threshold: f64,
    matching_enabled: bool,
    refiner_enabled: bool,
    refiner: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    refiner_checkpoint: Option<PathBuf>,
    smoke_detector: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoke_weights: Option<PathBuf>,
    vehicle_detector: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    vehicle_weights: Option<PathBuf>,
    detector_input: u32,
    noise_jitter: f64,
    noise_score_sigma: f64,
    noise_miss_rate: f64,
    noise_false_positive_rate: f64,
    seed: u64,
}

impl Default for FlatConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        let c = ClipConfig::default();
        let n = NoiseConfig::default();
        FlatConfig {
            smoke_threshold: 0.2,
            vehicle_threshold: 0.25,
            nms_iou: DEFAULT_NMS_IOU,
            l_dist: m.l_dist,
            front_filter: m.front_filter_enabled,
            min_overlap_iou: m.min_overlap_iou,
            k: c.k,
            min_side: c.min_side,
            train_resize: c.train_resize,
            train_crop: c.train_crop,
            eval_size: c.eval_size,
            refine_threshold: DEFAULT_REFINE_THRESHOLD,
            matching_enabled: true,
            refiner_enabled: true,
            refiner: HeadVariant::Suffix3d.to_string(),
            refiner_checkpoint: None,
            smoke_detector: DetectorKind::Oracle.to_string(),
            smoke_weights: None,
            vehicle_detector: DetectorKind::Oracle.to_string(),
            vehicle_weights: None,
            detector_input: 640,
            noise_jitter: n.jitter,
            noise_score_sigma: n.score_sigma,
            noise_miss_rate: n.miss_rate,
            noise_false_positive_rate: n.false_positive_rate,
            seed: 0,
        }
    }
}

impl FlatConfig {
    fn into_config(self) -> Result<CascadeConfig> {
        Ok(CascadeConfig {
            smoke_threshold: self.smoke_threshold,
            vehicle_threshold: self.vehicle_threshold,
            nms_iou: self.nms_iou,
            matching: MatchConfig {
                l_dist: self.l_dist,
                front_filter_enabled: self.front_filter,
                min_overlap_iou: self.min_overlap_iou,
            },
            clip: ClipConfig {
                k: self.k,
                min_side: self.min_side,
                train_resize: self.train_resize,
                train_crop: self.train_crop,
                eval_size: self.eval_size,
            },
            refine_threshold: self.refine_threshold,
            matching_enabled: self.matching_enabled,
            refiner_enabled: self.refiner_enabled,
            refiner: self.refiner.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            refiner_checkpoint: self.refiner_checkpoint,
            smoke_detector: DetectorConfig {
                kind: self.smoke_detector.parse()?,
                weights: self.smoke_weights,
            },
            vehicle_detector: DetectorConfig {
                kind: self.vehicle_detector.parse()?,
                weights: self.vehicle_weights,
            },
            detector_input: self.detector_input,
            noise: NoiseConfig {
                jitter: self.noise_jitter,
                score_sigma: self.noise_score_sigma,
                miss_rate: self.noise_miss_rate,
                false_positive_rate: self.noise_false_positive_rate,
            },
            seed: self.seed,
        })
    }

    fn from_config(c: &CascadeConfig) -> Self {
        FlatConfig {
            smoke_threshold: c.smoke_threshold,
            vehicle_threshold: c.vehicle_threshold,
            nms_iou: c.nms_iou,
            l_dist: c.matching.l_dist,
            front_filter: c.matching.front_filter_enabled,
            min_overlap_iou: c.matching.min_overlap_iou,
            k: c.clip.k,
            min_side: c.clip.min_side,
            train_resize: c.clip.train_resize,
            train_crop: c.clip.train_crop,
            eval_size: c.clip.eval_size,
            refine_threshold: c.refine_threshold,
            matching_enabled: c.matching_enabled,
            refiner_enabled: c.refiner_enabled,
            refiner: c.refiner.to_string(),
            refiner_checkpoint: c.refiner_checkpoint.clone(),
            smoke_detector: c.smoke_detector.kind.to_string(),
            smoke_weights: c.smoke_detector.weights.clone(),
            vehicle_detector: c.vehicle_detector.kind.to_string(),
            vehicle_weights: c.vehicle_detector.weights.clone(),
            detector_input: c.detector_input,
            noise_jitter: c.noise.jitter,
            noise_score_sigma: c.noise.score_sigma,
            noise_miss_rate: c.noise.miss_rate,
            noise_false_positive_rate: c.noise.false_positive_rate,
            seed: c.seed,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        unit_interval("smoke_threshold", self.smoke_threshold)?;
        unit_interval("vehicle_threshold", self.vehicle_threshold)?;
        unit_interval("nms_iou", self.nms_iou)?;
        unit_interval("refine_threshold", self.refine_threshold)?;
        unit_interval("noise_miss_rate", self.noise.miss_rate)?;
        if !(self.noise.false_positive_rate >= 0.0 && self.noise.jitter >= 0.0 && self.noise.score_sigma >= 0.0) {
            return Err(Error::Config("noise settings must be non-negative".into()));
        }
        if self.detector_input == 0 || !self.detector_input.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "detector_input {} must be a positive multiple of 32",
                self.detector_input
            )));
        }
        self.matching.validate()?;
        self.clip.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = flat.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&FlatConfig::from_config(self)).expect("flat config serializes")
    }

    /// Reads a config file; relative model paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.refiner_checkpoint,
            &mut cfg.smoke_detector.weights,
            &mut cfg.vehicle_detector.weights,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
