//! Model checkpoints and on-disk clip datasets.
//!
//! A checkpoint is the 8-byte magic `SMKCLIP1`, a little-endian `u32` header
//! length, a JSON header, then every parameter and normalization statistic
//! as little-endian `f32` in model order.
//!
//! A clip dataset is a directory holding `clips.jsonl` (one sidecar record
//! per clip) and one `clip_NNNNNN.rgb` blob per clip: `K` stacked RGB patches,
//! row-major, 3 bytes per pixel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip::{ClipConfig, ClipLabel, ClipSample, SquareRegion};
use super::model::{build_head, TemporalClassifier, TemporalHeadSpec};
use crate::annotations::{read_jsonl, write_jsonl, BoundingBox};
use crate::error::{Error, Result};
use crate::nn::Layer;

const MAGIC: &[u8; 8] = b"SMKCLIP1";
pub const CLIPS_FILE: &str = "clips.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: TemporalHeadSpec,
    clip: ClipConfig,
    tensors: Vec<usize>,
}

/// Serializes the model and the clip settings it was trained with.
pub fn checkpoint_bytes(model: &mut TemporalClassifier, clip: &ClipConfig) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut values = Vec::new();
    model.visit_params(&mut |p| {
        tensors.push(p.len());
        values.extend(p.value.iter().flat_map(|v| v.to_le_bytes()));
    });
    let header = serde_json::to_vec(&Header {
        spec: model.spec,
        clip: *clip,
        tensors,
    })
    .expect("header serialization");
    let mut out = Vec::with_capacity(12 + header.len() + values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&values);
    out
}

pub fn save_checkpoint(model: &mut TemporalClassifier, clip: &ClipConfig, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, clip);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TemporalClassifier, ClipConfig)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(TemporalClassifier, ClipConfig)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Validation("not a clip-classifier checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Validation("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Validation(format!("checkpoint header: {e}")))?;
    header.clip.validate()?;
    if header.clip.k != header.spec.k {
        return Err(Error::Validation(format!(
            "checkpoint clip K={} differs from model K={}",
            header.clip.k, header.spec.k
        )));
    }
    let mut model = build_head(&header.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut data = bytes[12 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let expected: usize = header.tensors.iter().sum();
    if (bytes.len() - 12 - hlen) != 4 * expected {
        return Err(Error::Validation("checkpoint payload size does not match its header".into()));
    }
    let mut lens = header.tensors.iter();
    let mut mismatch = false;
    model.visit_params(&mut |p| match lens.next() {
        Some(&n) if n == p.len() => {
            for v in p.value.iter_mut() {
                *v = data.next().expect("payload length checked");
            }
        }
        _ => mismatch = true,
    });
    if mismatch || lens.next().is_some() {
        return Err(Error::Validation("checkpoint tensors do not match the model layout".into()));
    }
    Ok((model, header.clip))
}

/// Sidecar record of one stored clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: usize,
    pub video: String,
    pub frame: u64,
    pub frames: Vec<u64>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub region: SquareRegion,
    pub padded: bool,
    pub size: u32,
    pub label: Option<ClipLabel>,
}

fn blob_name(id: usize) -> String {
    format!("clip_{id:06}.rgb")
}

pub fn write_clip_dataset(dir: &Path, samples: &[ClipSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        let size = s.patch_size();
        let mut blob = Vec::with_capacity(s.k() * (size * size * 3) as usize);
        for p in &s.patches {
            if p.width() != size || p.height() != size {
                return Err(Error::Shape(format!("clip {id} has patches of different sizes")));
            }
            blob.extend_from_slice(p.as_raw());
        }
        let path = dir.join(blob_name(id));
        fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
        records.push(ClipRecord {
            id,
            video: s.video_id.clone(),
            frame: s.center_frame,
            frames: s.frames.clone(),
            bbox: s.source_box,
            region: s.region,
            padded: s.padded,
            size,
            label: s.label,
        });
    }
    write_jsonl(&dir.join(CLIPS_FILE), &records)
}

pub fn read_clip_dataset(dir: &Path) -> Result<Vec<ClipSample>> {
    let records: Vec<ClipRecord> = read_jsonl(&dir.join(CLIPS_FILE))?;
    records
        .into_iter()
        .map(|r| {
            let path = dir.join(blob_name(r.id));
            let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let plane = (r.size * r.size * 3) as usize;
            if plane == 0 || blob.len() != plane * r.frames.len() {
                return Err(Error::Validation(format!(
                    "{}: expected {} patches of {}x{}",
                    path.display(),
                    r.frames.len(),
                    r.size,
                    r.size
                )));
            }
            let patches = blob
                .chunks_exact(plane)
                .map(|c| RgbImage::from_raw(r.size, r.size, c.to_vec()).expect("sized chunk"))
                .collect();
            Ok(ClipSample {
                video_id: r.video,
                center_frame: r.frame,
                frames: r.frames,
                source_box: r.bbox,
                region: r.region,
                padded: r.padded,
                patches,
                label: r.label,
            })
        })
        .collect()
}
