//! Overlay images of cascade decisions.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::pipeline::FrameVerdict;
use crate::annotations::{BoundingBox, Category, ScoredDetection};
use crate::error::{Error, Result};
use crate::video::{frame_file_name, save_png, VideoSource};

pub const SURVIVOR_COLOR: Rgb<u8> = Rgb([0, 220, 0]);
pub const DROPPED_COLOR: Rgb<u8> = Rgb([250, 220, 0]);
const LINE: u32 = 2;

fn draw_box(img: &mut RgbImage, b: &BoundingBox, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let clamp = |v: f64, hi: u32| (v.round().max(0.0) as u32).min(hi - 1);
    let (x1, y1) = (clamp(b.x1(), w), clamp(b.y1(), h));
    let (x2, y2) = (clamp(b.x2() - 1.0, w), clamp(b.y2() - 1.0, h));
    for y in y1..=y2 {
        for x in x1..=x2 {
            let edge = x < x1 + LINE || x + LINE > x2 || y < y1 + LINE || y + LINE > y2;
            if edge {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Writes one PNG per frame that had any smoke detection or surviving pair:
/// survivors and their vehicles in green, smoke dropped by a later stage in
/// yellow. Returns the written paths in frame order.
pub fn render_overlays(
    source: &mut dyn VideoSource,
    verdicts: &[FrameVerdict],
    detections: &[ScoredDetection],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut created = false;
    while let Some(frame) = source.next_frame()? {
        let pairs = verdicts
            .iter()
            .find(|v| v.frame == frame.index)
            .map(|v| v.pairs.as_slice())
            .unwrap_or(&[]);
        let dropped: Vec<&ScoredDetection> = detections
            .iter()
            .filter(|d| d.frame_index == frame.index && d.category == Category::Smoke)
            .filter(|d| !pairs.iter().any(|p| p.smoke == d.bbox))
            .collect();
        if pairs.is_empty() && dropped.is_empty() {
            continue;
        }
        if !created {
            fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
            created = true;
        }
        let mut img = (*frame.image).clone();
        for d in dropped {
            draw_box(&mut img, &d.bbox, DROPPED_COLOR);
        }
        for p in pairs {
            if let Some(v) = &p.vehicle {
                draw_box(&mut img, v, SURVIVOR_COLOR);
            }
            draw_box(&mut img, &p.smoke, SURVIVOR_COLOR);
        }
        let path = out_dir.join(frame_file_name(frame.index));
        save_png(&img, &path)?;
        written.push(path);
    }
    Ok(written)
}
