//! Square spatio-temporal clips cut around detections.

use std::collections::VecDeque;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotations::{BoundingBox, ScoredDetection};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::video::Frame;

/// Per-channel normalization applied to patches (ImageNet statistics).
pub const PATCH_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const PATCH_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    /// Temporal extent `K`.
    pub k: usize,
    pub min_side: f64,
    pub train_resize: u32,
    pub train_crop: u32,
    pub eval_size: u32,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            k: 3,
            min_side: 112.0,
            train_resize: 128,
            train_crop: 112,
            eval_size: 112,
        }
    }
}

impl ClipConfig {
    /// Larger input: resize to 256, crop 224.
    pub fn large() -> Self {
        ClipConfig {
            train_resize: 256,
            train_crop: 224,
            eval_size: 224,
            ..Self::default()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("temporal extent K must be at least 1".into()));
        }
        if self.train_crop == 0 || self.train_crop > self.train_resize || self.eval_size == 0 {
            return Err(Error::Config(format!(
                "clip sizes invalid: resize {}, crop {}, eval {}",
                self.train_resize, self.train_crop, self.eval_size
            )));
        }
        if !(self.min_side.is_finite() && self.min_side > 0.0) {
            return Err(Error::Config(format!("minimum clip side {} must be positive", self.min_side)));
        }
        Ok(())
    }
}

/// A crop region and whether the frame forced it off-square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareRegion {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub clipped: bool,
}

/// Square of side `max(min_side, longest side)` on the box center, shifted
/// to lie inside the frame. An axis longer than the frame is clipped to it
/// and the region flagged.
pub fn extend_to_square(bbox: &BoundingBox, frame_w: f64, frame_h: f64, min_side: f64) -> SquareRegion {
    let side = bbox.longest_side().max(min_side);
    let (cx, cy) = bbox.center();
    let place = |c: f64, limit: f64| -> (f64, f64, bool) {
        if side > limit {
            (0.0, limit, true)
        } else {
            let lo = (c - side / 2.0).clamp(0.0, limit - side);
            (lo, (lo + side).min(limit), false)
        }
    };
    let (x1, x2, cw) = place(cx, frame_w);
    let (y1, y2, ch) = place(cy, frame_h);
    SquareRegion {
        bbox: BoundingBox::new(x1, y1, x2, y2).expect("non-empty frame"),
        clipped: cw || ch,
    }
}

/// Bilinear resample of `region` into a `size x size` patch.
pub fn crop_resize(img: &RgbImage, region: &BoundingBox, size: u32) -> RgbImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let sx = region.width() / size as f64;
    let sy = region.height() / size as f64;
    let mut out = RgbImage::new(size, size);
    for (j, i, px) in out.enumerate_pixels_mut() {
        let fx = (region.x1() + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, w - 1.0);
        let fy = (region.y1() + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, h - 1.0);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let mut v = [0u8; 3];
        for (c, vc) in v.iter_mut().enumerate() {
            let p = |x: u32, y: u32| img.get_pixel(x, y)[c] as f64;
            let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
            let bottom = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
            *vc = (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipLabel {
    NonSmoke,
    Smoke,
}

impl ClipLabel {
    pub fn class_index(self) -> usize {
        match self {
            ClipLabel::NonSmoke => 0,
            ClipLabel::Smoke => 1,
        }
    }
}

/// `K` patches cut from the same region of consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub video_id: String,
    /// Frame the detection came from; the last frame of the window.
    pub center_frame: u64,
    /// Source frame of each patch, oldest first.
    pub frames: Vec<u64>,
    pub source_box: BoundingBox,
    /// The single region every patch was cut from.
    pub region: SquareRegion,
    /// True when the window reached before the first buffered frame.
    pub padded: bool,
    pub patches: Vec<RgbImage>,
    pub label: Option<ClipLabel>,
}

impl ClipSample {
    pub fn k(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_size(&self) -> u32 {
        self.patches.first().map_or(0, |p| p.width())
    }

    /// Patches resampled to `size` (a no-op when already that size).
    pub fn resized(&self, size: u32) -> Vec<RgbImage> {
        self.patches
            .iter()
            .map(|p| {
                if p.width() == size {
                    p.clone()
                } else {
                    let whole = BoundingBox::new(0.0, 0.0, p.width() as f64, p.height() as f64).expect("patch");
                    crop_resize(p, &whole, size)
                }
            })
            .collect()
    }
}

/// Ring buffer of the most recent frames.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    capacity: usize,
    frames: VecDeque<Frame>,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        FrameBuffer {
            capacity: capacity.max(1),
            frames: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, frame: Frame) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn get(&self, index: u64) -> Option<&Frame> {
        self.frames.iter().find(|f| f.index == index)
    }

    /// Frames `[t - k + 1, t]`; indices before the earliest buffered frame
    /// repeat it. Returns the frames and whether padding occurred.
    pub fn window(&self, t: u64, k: usize) -> Result<(Vec<Frame>, bool)> {
        let last = self
            .get(t)
            .ok_or_else(|| Error::Validation(format!("frame {t} is not buffered")))?;
        let earliest = self.frames.iter().filter(|f| f.index <= t).map(|f| f.index).min().unwrap_or(last.index);
        let mut padded = false;
        let mut out = Vec::with_capacity(k);
        for back in (0..k as u64).rev() {
            let want = t.checked_sub(back);
            let idx = match want {
                Some(i) if i >= earliest => i,
                _ => {
                    padded = true;
                    earliest
                }
            };
            let f = self
                .get(idx)
                .ok_or_else(|| Error::Validation(format!("frame {idx} missing from buffer")))?;
            out.push(f.clone());
        }
        Ok((out, padded))
    }
}

/// Cuts the trailing `K`-frame clip for `detection` with patches of `size`.
pub fn extract_clip_sized(
    buffer: &FrameBuffer,
    detection: &ScoredDetection,
    video_id: &str,
    k: usize,
    min_side: f64,
    size: u32,
) -> Result<ClipSample> {
    if k == 0 {
        return Err(Error::Config("temporal extent K must be at least 1".into()));
    }
    let (frames, padded) = buffer.window(detection.frame_index, k)?;
    let last = frames.last().expect("k >= 1");
    let region = extend_to_square(&detection.bbox, last.width() as f64, last.height() as f64, min_side);
    let patches = frames.iter().map(|f| crop_resize(&f.image, &region.bbox, size)).collect();
    Ok(ClipSample {
        video_id: video_id.to_string(),
        center_frame: detection.frame_index,
        frames: frames.iter().map(|f| f.index).collect(),
        source_box: detection.bbox,
        region,
        padded,
        patches,
        label: None,
    })
}

/// Inference clip: trailing window, patches at the evaluation size.
pub fn extract_clip(buffer: &FrameBuffer, detection: &ScoredDetection, video_id: &str, cfg: &ClipConfig) -> Result<ClipSample> {
    extract_clip_sized(buffer, detection, video_id, cfg.k, cfg.min_side, cfg.eval_size)
}

/// Stacks equally sized patch sets into a normalized `[N, 3, K, S, S]`
/// tensor. `offsets` selects a `size x size` window per sample.
pub fn patches_to_tensor(sets: &[Vec<RgbImage>], size: u32, offsets: Option<&[(u32, u32)]>) -> Result<Tensor> {
    let n = sets.len();
    let k = sets.first().map_or(0, |s| s.len());
    let s = size as usize;
    let plane = s * s;
    let mut data = vec![0f32; n * 3 * k * plane];
    for (b, set) in sets.iter().enumerate() {
        if set.len() != k {
            return Err(Error::Shape(format!("clip {b} has {} frames, expected {k}", set.len())));
        }
        let (ox, oy) = offsets.map_or((0, 0), |o| o[b]);
        for (f, patch) in set.iter().enumerate() {
            if patch.width() < ox + size || patch.height() < oy + size {
                return Err(Error::Shape(format!(
                    "patch {}x{} too small for a {size} window at ({ox}, {oy})",
                    patch.width(),
                    patch.height()
                )));
            }
            for i in 0..s {
                for j in 0..s {
                    let px = patch.get_pixel(ox + j as u32, oy + i as u32);
                    for c in 0..3 {
                        let v = (px[c] as f32 / 255.0 - PATCH_MEAN[c]) / PATCH_STD[c];
                        data[((b * 3 + c) * k + f) * plane + i * s + j] = v;
                    }
                }
            }
        }
    }
    Tensor::from_vec([n, 3, k, s, s], data)
}
