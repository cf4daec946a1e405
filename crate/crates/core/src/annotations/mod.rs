//! Core value types shared by every stage, plus their file formats and the
//! synthetic fixture generator.
//!
//! Boxes are pixel-space, corner form `(x1, y1, x2, y2)`, origin top-left with
//! `x` growing right and `y` growing down.

mod fixture;
mod io;

pub use fixture::{
    generate_fixture, EventKind, Fixture, FixtureEvent, FixtureScript, FrameTruth, ScenarioSpec,
    TruthBox, TruthKind,
};
pub use io::{
    load_box_annotations, load_segment_annotations, read_detection_stream, read_jsonl,
    write_box_annotations, write_jsonl,
    write_detection_stream, write_segment_annotations, DetectionRecord, ImageAnnotation,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite box coordinates ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Validation(format!(
                "inverted or empty box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box of the given size with its top-left corner at `(x, y)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn longest_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Area of the overlap with `other`, zero when disjoint or only touching.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Multiplies every coordinate by `s`. Panics in debug builds for `s <= 0`.
    pub fn scale(&self, s: f64) -> BoundingBox {
        debug_assert!(s > 0.0);
        BoundingBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    /// Intersection with the frame `[0, width] x [0, height]`; `None` when
    /// nothing of the box is left.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
        .ok()
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Detection category: smoke plus the three COCO vehicle classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Smoke,
    Car,
    Bus,
    Truck,
}

impl Category {
    pub const VEHICLES: [Category; 3] = [Category::Car, Category::Bus, Category::Truck];

    pub fn is_vehicle(self) -> bool {
        !matches!(self, Category::Smoke)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Smoke => "smoke",
            Category::Car => "car",
            Category::Bus => "bus",
            Category::Truck => "truck",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Category::Smoke),
            "car" => Ok(Category::Car),
            "bus" => Ok(Category::Bus),
            "truck" => Ok(Category::Truck),
            other => Err(Error::Validation(format!("unknown category {other:?}"))),
        }
    }
}

/// A box with a confidence score and category, tied to a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: Category,
    pub frame_index: u64,
}

impl ScoredDetection {
    pub fn new(bbox: BoundingBox, score: f64, category: Category, frame_index: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            category,
            frame_index,
        })
    }
}

/// Inclusive `[start_frame, end_frame]` range of smoky frames in one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentAnnotation {
    pub video_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
    pub scene_id: String,
}

/// All segment annotations of one video together with its length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSegments {
    #[serde(rename = "video")]
    pub video_id: String,
    #[serde(rename = "scene")]
    pub scene_id: String,
    pub num_frames: u64,
    /// Inclusive `[start, end]` pairs.
    pub segments: Vec<[u64; 2]>,
}

impl VideoSegments {
    pub fn annotations(&self) -> Vec<SegmentAnnotation> {
        self.segments
            .iter()
            .map(|&[start_frame, end_frame]| SegmentAnnotation {
                video_id: self.video_id.clone(),
                start_frame,
                end_frame,
                scene_id: self.scene_id.clone(),
            })
            .collect()
    }

    pub fn labels(&self) -> Result<FrameLabelSet> {
        let mut set = expand_segments(&self.annotations(), self.num_frames)?;
        set.video_id = self.video_id.clone();
        Ok(set)
    }
}

/// Per-frame binary smoke labels of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabelSet {
    pub video_id: String,
    pub labels: Vec<bool>,
}

impl FrameLabelSet {
    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.num_frames() - self.positives()
    }

    pub fn is_positive(&self, frame: u64) -> bool {
        self.labels.get(frame as usize).copied().unwrap_or(false)
    }
}

/// Expands inclusive segments into per-frame labels.
///
/// Segments may be given in any order but must not overlap and must end
/// before `num_frames`.
pub fn expand_segments(segments: &[SegmentAnnotation], num_frames: u64) -> Result<FrameLabelSet> {
    let video_id = segments
        .first()
        .map(|s| s.video_id.clone())
        .unwrap_or_default();
    let mut sorted: Vec<&SegmentAnnotation> = segments.iter().collect();
    sorted.sort_by_key(|s| (s.start_frame, s.end_frame));

    let mut labels = vec![false; num_frames as usize];
    let mut prev_end: Option<u64> = None;
    for seg in sorted {
        if seg.video_id != video_id {
            return Err(Error::Validation(format!(
                "segments from different videos ({:?} and {:?}) in one label set",
                video_id, seg.video_id
            )));
        }
        if seg.start_frame > seg.end_frame {
            return Err(Error::Validation(format!(
                "segment [{}, {}] of {:?} starts after it ends",
                seg.start_frame, seg.end_frame, seg.video_id
            )));
        }
        if seg.end_frame >= num_frames {
            return Err(Error::Range(format!(
                "segment [{}, {}] of {:?} ends past the last frame {}",
                seg.start_frame,
                seg.end_frame,
                seg.video_id,
                num_frames.saturating_sub(1)
            )));
        }
        if let Some(end) = prev_end {
            if seg.start_frame <= end {
                return Err(Error::Validation(format!(
                    "overlapping segments in {:?} at frame {}",
                    seg.video_id, seg.start_frame
                )));
            }
        }
        prev_end = Some(seg.end_frame);
        for l in &mut labels[seg.start_frame as usize..=seg.end_frame as usize] {
            *l = true;
        }
    }
    Ok(FrameLabelSet { video_id, labels })
}
