//! Frame sources. A video on disk is a directory of `frame_NNNNNN.png`
//! images, optionally accompanied by `segments.jsonl` and `truth.jsonl`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;

use crate::annotations::{read_jsonl, write_jsonl, write_segment_annotations, Fixture, FrameTruth};
use crate::error::{Error, Result};

pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const SCRIPT_FILE: &str = "script.toml";

/// One decoded frame. Images are shared so buffers can hold them cheaply.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub image: Arc<RgbImage>,
}

impl Frame {
    pub fn new(index: u64, image: RgbImage) -> Self {
        Frame {
            index,
            image: Arc::new(image),
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

pub trait VideoSource {
    /// Frame `(width, height)`.
    fn dims(&self) -> (u32, u32);

    fn num_frames(&self) -> u64;

    /// Next frame in order, or `None` at the end.
    fn next_frame(&mut self) -> Result<Option<Frame>>;
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

/// Frames held in memory.
#[derive(Debug, Clone)]
pub struct MemorySource {
    frames: Vec<Arc<RgbImage>>,
    next: usize,
}

impl MemorySource {
    pub fn new(frames: Vec<RgbImage>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| f.dimensions() != first.dimensions()) {
                return Err(Error::Shape("frames of different sizes in one video".into()));
            }
        }
        Ok(MemorySource {
            frames: frames.into_iter().map(Arc::new).collect(),
            next: 0,
        })
    }
}

impl VideoSource for MemorySource {
    fn dims(&self) -> (u32, u32) {
        self.frames.first().map_or((0, 0), |f| f.dimensions())
    }

    fn num_frames(&self) -> u64 {
        self.frames.len() as u64
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        let Some(img) = self.frames.get(self.next) else {
            return Ok(None);
        };
        let frame = Frame {
            index: self.next as u64,
            image: Arc::clone(img),
        };
        self.next += 1;
        Ok(Some(frame))
    }
}

/// Lazily decodes a directory of numbered PNG frames.
#[derive(Debug, Clone)]
pub struct FrameDirSource {
    dir: PathBuf,
    count: u64,
    dims: (u32, u32),
    next: u64,
}

impl FrameDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut indices = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
                if let Ok(i) = num.parse::<u64>() {
                    indices.push(i);
                }
            }
        }
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(Error::Validation(format!("no frame_NNNNNN.png files in {}", dir.display())));
        }
        if let Some(gap) = indices.iter().enumerate().find(|&(i, &v)| i as u64 != v) {
            return Err(Error::Validation(format!(
                "frame numbering in {} is not contiguous from 0 (missing {})",
                dir.display(),
                gap.0
            )));
        }
        let first = load_png(&dir.join(frame_file_name(0)))?;
        Ok(FrameDirSource {
            dir: dir.to_path_buf(),
            count: indices.len() as u64,
            dims: first.dimensions(),
            next: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl VideoSource for FrameDirSource {
    fn dims(&self) -> (u32, u32) {
        self.dims
    }

    fn num_frames(&self) -> u64 {
        self.count
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        if self.next >= self.count {
            return Ok(None);
        }
        let img = load_png(&self.dir.join(frame_file_name(self.next)))?;
        if img.dimensions() != self.dims {
            return Err(Error::Shape(format!(
                "frame {} is {:?}, expected {:?}",
                self.next,
                img.dimensions(),
                self.dims
            )));
        }
        let frame = Frame::new(self.next, img);
        self.next += 1;
        Ok(Some(frame))
    }
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other}", path.display())),
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other}", path.display())),
    })
}

/// Writes frames, segments, per-frame truth and the script into `dir`.
pub fn write_fixture_dir(fixture: &Fixture, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in fixture.frames.iter().enumerate() {
        save_png(f, &dir.join(frame_file_name(i as u64)))?;
    }
    write_segment_annotations(&dir.join(SEGMENTS_FILE), std::slice::from_ref(&fixture.segments))?;
    write_jsonl(&dir.join(TRUTH_FILE), &fixture.truth)?;
    let script = toml::to_string(&fixture.script).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(SCRIPT_FILE);
    fs::write(&path, script).map_err(|e| Error::io(&path, e))
}

pub fn load_truth(path: &Path) -> Result<Vec<FrameTruth>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{generate_fixture, EventKind, FixtureEvent, FixtureScript};

    fn small_fixture() -> Fixture {
        let script = FixtureScript::new(64, 48, 4).event(FixtureEvent::new(
            EventKind::SmokeWithVehicle,
            (1, 2),
            [10.0, 5.0, 30.0, 20.0],
        ));
        generate_fixture(&script, 7).unwrap()
    }

    #[test]
    fn fixture_dir_roundtrip() {
        let fx = small_fixture();
        let dir = tempfile::tempdir().unwrap();
        write_fixture_dir(&fx, dir.path()).unwrap();
        let mut src = FrameDirSource::open(dir.path()).unwrap();
        assert_eq!(src.dims(), (64, 48));
        assert_eq!(src.num_frames(), 4);
        let mut n = 0;
        while let Some(f) = src.next_frame().unwrap() {
            assert_eq!(*f.image, fx.frames[f.index as usize]);
            n += 1;
        }
        assert_eq!(n, 4);
        assert_eq!(load_truth(&dir.path().join(TRUTH_FILE)).unwrap(), fx.truth);
    }

    #[test]
    fn missing_dir_is_io_error() {
        let err = FrameDirSource::open(Path::new("/nonexistent/video")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn gap_in_numbering_rejected() {
        let fx = small_fixture();
        let dir = tempfile::tempdir().unwrap();
        save_png(&fx.frames[0], &dir.path().join(frame_file_name(0))).unwrap();
        save_png(&fx.frames[1], &dir.path().join(frame_file_name(2))).unwrap();
        assert!(FrameDirSource::open(dir.path()).is_err());
    }

    #[test]
    fn memory_source_yields_in_order() {
        let fx = small_fixture();
        let mut src = MemorySource::new(fx.frames.clone()).unwrap();
        let idx: Vec<u64> = std::iter::from_fn(|| src.next_frame().unwrap()).map(|f| f.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }
}
