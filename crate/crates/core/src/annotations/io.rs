//! Line-delimited JSON readers and writers for the on-disk formats.
//!
//! Every file is UTF-8 with one JSON record per line. Unknown fields are
//! ignored on read; blank lines are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Category, ScoredDetection, VideoSegments};
use crate::error::{Error, Result};

/// Box annotations of a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
    pub categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    image: String,
    width: u32,
    height: u32,
    boxes: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<Vec<String>>,
}

/// Wire form of one detection-stream line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: u64,
    pub category: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl From<&ScoredDetection> for DetectionRecord {
    fn from(d: &ScoredDetection) -> Self {
        DetectionRecord {
            frame: d.frame_index,
            category: d.category.to_string(),
            score: d.score,
            bbox: d.bbox.to_array(),
        }
    }
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<ScoredDetection> {
        let category: Category = self.category.parse()?;
        let bbox = BoundingBox::try_from(self.bbox)?;
        ScoredDetection::new(bbox, self.score, category, self.frame)
    }
}

/// Parses each non-blank line of `path` into `T`, handing `(line, record)` to
/// `f`. Line numbers are 1-based.
fn for_each_record<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, record)?;
    }
    Ok(())
}

/// Reads every record of a line-delimited JSON file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for_each_record(path, |_, r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    write_lines(path, records)
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        // Serializing plain structs of numbers and strings cannot fail.
        let line = serde_json::to_string(&r).expect("record serialization");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a box annotation file, one image per line. Streams line by line, so
/// manifests of 75,000 annotated smoke frames load without holding the raw
/// text in memory.
pub fn load_box_annotations(path: &Path) -> Result<Vec<ImageAnnotation>> {
    let mut out = Vec::new();
    for_each_record(path, |line, rec: BoxRecord| {
        let boxes = rec
            .boxes
            .iter()
            .map(|&b| BoundingBox::try_from(b))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| {
                Error::Validation(format!("image {:?} (line {line}): {e}", rec.image))
            })?;
        let categories = match rec.category {
            None => vec![Category::Smoke; boxes.len()],
            Some(names) => {
                if names.len() != boxes.len() {
                    return Err(Error::Validation(format!(
                        "image {:?} (line {line}): {} categories for {} boxes",
                        rec.image,
                        names.len(),
                        boxes.len()
                    )));
                }
                names
                    .iter()
                    .map(|n| n.parse())
                    .collect::<Result<Vec<Category>>>()
                    .map_err(|e| {
                        Error::Validation(format!("image {:?} (line {line}): {e}", rec.image))
                    })?
            }
        };
        out.push(ImageAnnotation {
            image: rec.image,
            width: rec.width,
            height: rec.height,
            boxes,
            categories,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Writes box annotations, clipping every box to its image. Boxes that fall
/// entirely outside the image are dropped.
pub fn write_box_annotations(path: &Path, images: &[ImageAnnotation]) -> Result<()> {
    let records = images.iter().map(|img| {
        let (w, h) = (img.width as f64, img.height as f64);
        let (boxes, cats): (Vec<[f64; 4]>, Vec<String>) = img
            .boxes
            .iter()
            .zip(&img.categories)
            .filter_map(|(b, c)| b.clip_to(w, h).map(|b| (b.to_array(), c.to_string())))
            .unzip();
        BoxRecord {
            image: img.image.clone(),
            width: img.width,
            height: img.height,
            boxes,
            category: Some(cats),
        }
    });
    write_lines(path, records)
}

pub fn load_segment_annotations(path: &Path) -> Result<Vec<VideoSegments>> {
    let mut out = Vec::new();
    for_each_record(path, |line, rec: VideoSegments| {
        // Validates ordering, overlap and range.
        rec.labels()
            .map_err(|e| Error::Validation(format!("video {:?} (line {line}): {e}", rec.video_id)))?;
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_segment_annotations(path: &Path, videos: &[VideoSegments]) -> Result<()> {
    write_lines(path, videos)
}

pub fn read_detection_stream(path: &Path) -> Result<Vec<ScoredDetection>> {
    let mut out = Vec::new();
    for_each_record(path, |line, rec: DetectionRecord| {
        let det = rec
            .validate()
            .map_err(|e| Error::Validation(format!("{} line {line}: {e}", path.display())))?;
        out.push(det);
        Ok(())
    })?;
    Ok(out)
}

/// Writes detections one per line, stably sorted by frame index.
pub fn write_detection_stream(detections: &[ScoredDetection], path: &Path) -> Result<()> {
    let mut sorted: Vec<&ScoredDetection> = detections.iter().collect();
    sorted.sort_by_key(|d| d.frame_index);
    write_lines(path, sorted.into_iter().map(DetectionRecord::from))
}
