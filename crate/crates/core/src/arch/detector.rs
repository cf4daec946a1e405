//! Pluggable frame detectors and the shared post-processing contract.

use std::collections::HashMap;

use image::imageops::{self, FilterType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::network::{Network, ScaleOutput};
use crate::annotations::{BoundingBox, Category, FrameTruth, ScoredDetection, TruthKind};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::nn::{sigmoid, Tensor};
use crate::video::Frame;

pub const DEFAULT_NMS_IOU: f64 = 0.45;

/// Produces raw candidate detections for a frame. Implementations need not
/// threshold, suppress, clip or sort; [`run_detector`] does that.
pub trait DetectionModel: Send {
    fn name(&self) -> &str;

    fn detect(&mut self, frame: &Frame) -> Result<Vec<ScoredDetection>>;
}

pub struct DetectorHandle {
    model: Box<dyn DetectionModel>,
    pub threshold: f64,
    pub nms_iou: f64,
    /// Frame `(width, height)` the model was built for, if fixed.
    pub expected_size: Option<(u32, u32)>,
}

impl std::fmt::Debug for DetectorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetectorHandle")
            .field("model", &self.model.name())
            .field("threshold", &self.threshold)
            .field("nms_iou", &self.nms_iou)
            .field("expected_size", &self.expected_size)
            .finish()
    }
}

impl DetectorHandle {
    pub fn new(model: impl DetectionModel + 'static, threshold: f64) -> Self {
        DetectorHandle {
            model: Box::new(model),
            threshold,
            nms_iou: DEFAULT_NMS_IOU,
            expected_size: None,
        }
    }

    pub fn with_expected_size(mut self, width: u32, height: u32) -> Self {
        self.expected_size = Some((width, height));
        self
    }

    pub fn with_nms_iou(mut self, nms_iou: f64) -> Self {
        self.nms_iou = nms_iou;
        self
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    /// Detections at the handle's own threshold.
    pub fn detect(&mut self, frame: &Frame) -> Result<Vec<ScoredDetection>> {
        let t = self.threshold;
        run_detector(self, frame, t)
    }
}

/// Runs the model and applies the output contract: score at least
/// `threshold`, class-wise NMS, boxes clipped to the frame, sorted by
/// descending score.
pub fn run_detector(handle: &mut DetectorHandle, frame: &Frame, threshold: f64) -> Result<Vec<ScoredDetection>> {
    let dims = (frame.width(), frame.height());
    if let Some(expected) = handle.expected_size {
        if expected != dims {
            return Err(Error::Shape(format!(
                "detector {} expects {}x{} frames, got {}x{}",
                handle.name(),
                expected.0,
                expected.1,
                dims.0,
                dims.1
            )));
        }
    }
    let (w, h) = (dims.0 as f64, dims.1 as f64);
    let raw = handle.model.detect(frame)?;
    let candidates: Vec<ScoredDetection> = raw
        .into_iter()
        .filter(|d| d.score >= threshold && d.score <= 1.0)
        .filter_map(|d| {
            d.bbox.clip_to(w, h).map(|bbox| ScoredDetection {
                bbox,
                frame_index: frame.index,
                ..d
            })
        })
        .collect();
    Ok(nms(candidates, handle.nms_iou))
}

/// Greedy non-maximum suppression within each category. The result is
/// sorted by descending score; equal scores keep their input order.
pub fn nms(mut dets: Vec<ScoredDetection>, iou_threshold: f64) -> Vec<ScoredDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].category == dets[i].category && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<ScoredDetection>> = dets.drain(..).map(Some).collect();
    kept.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

/// What an [`OracleDetector`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleRole {
    /// Smoke boxes, plus decoys as false positives.
    Smoke,
    Vehicle,
}

/// Reports planted ground truth of a fixture.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    role: OracleRole,
    truth: HashMap<u64, FrameTruth>,
    pub score: f64,
    /// Score given to decoys by the smoke oracle; `None` hides them.
    pub decoy_score: Option<f64>,
}

impl OracleDetector {
    pub fn new(role: OracleRole, truth: &[FrameTruth]) -> Self {
        OracleDetector {
            role,
            truth: truth.iter().map(|t| (t.frame, t.clone())).collect(),
            score: 0.99,
            decoy_score: Some(0.6),
        }
    }

    pub fn smoke(truth: &[FrameTruth]) -> Self {
        Self::new(OracleRole::Smoke, truth)
    }

    pub fn vehicle(truth: &[FrameTruth]) -> Self {
        Self::new(OracleRole::Vehicle, truth)
    }
}

impl DetectionModel for OracleDetector {
    fn name(&self) -> &str {
        match self.role {
            OracleRole::Smoke => "oracle-smoke",
            OracleRole::Vehicle => "oracle-vehicle",
        }
    }

    fn detect(&mut self, frame: &Frame) -> Result<Vec<ScoredDetection>> {
        let Some(t) = self.truth.get(&frame.index) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for b in &t.boxes {
            let score = match (self.role, b.kind) {
                (OracleRole::Smoke, TruthKind::Smoke) | (OracleRole::Vehicle, TruthKind::Vehicle) => self.score,
                (OracleRole::Smoke, TruthKind::Decoy) => match self.decoy_score {
                    Some(s) => s,
                    None => continue,
                },
                _ => continue,
            };
            let category = if self.role == OracleRole::Smoke {
                Category::Smoke
            } else {
                b.category
            };
            out.push(ScoredDetection::new(b.bbox, score, category, frame.index)?);
        }
        Ok(out)
    }
}

/// Perturbs another model's output: Gaussian box jitter, score noise,
/// random misses and spurious boxes. Noise depends only on the seed and the
/// frame index, so results do not depend on call order.
pub struct NoisyDetector<M> {
    inner: M,
    pub seed: u64,
    /// Standard deviation of corner jitter as a fraction of box size.
    pub jitter: f64,
    pub score_sigma: f64,
    pub miss_rate: f64,
    /// Expected spurious boxes per frame.
    pub false_positive_rate: f64,
    pub false_positive_category: Category,
    name: String,
}

impl<M: DetectionModel> NoisyDetector<M> {
    pub fn new(inner: M, seed: u64) -> Self {
        let name = format!("noisy-{}", inner.name());
        NoisyDetector {
            inner,
            seed,
            jitter: 0.05,
            score_sigma: 0.05,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            false_positive_category: Category::Smoke,
            name,
        }
    }
}

impl<M: DetectionModel> DetectionModel for NoisyDetector<M> {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&mut self, frame: &Frame) -> Result<Vec<ScoredDetection>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ frame.index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::new();
        for d in self.inner.detect(frame)? {
            if rng.random::<f64>() < self.miss_rate {
                continue;
            }
            let (bw, bh) = (d.bbox.width(), d.bbox.height());
            let mut c = d.bbox.to_array();
            for (i, v) in c.iter_mut().enumerate() {
                let scale = if i % 2 == 0 { bw } else { bh };
                *v += self.jitter * scale * unit.sample(&mut rng);
            }
            let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
            let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
            let Ok(bbox) = BoundingBox::new(x1, y1, x2.max(x1 + 1.0), y2.max(y1 + 1.0)) else {
                continue;
            };
            let score = (d.score + self.score_sigma * unit.sample(&mut rng)).clamp(0.0, 1.0);
            out.push(ScoredDetection { bbox, score, ..d });
        }
        let (w, h) = (frame.width() as f64, frame.height() as f64);
        let mut budget = self.false_positive_rate;
        while budget > 0.0 && rng.random::<f64>() < budget.min(1.0) {
            budget -= 1.0;
            let bw = rng.random_range(8.0..(w / 4.0).max(9.0));
            let bh = rng.random_range(8.0..(h / 4.0).max(9.0));
            let x = rng.random_range(0.0..(w - bw).max(1.0));
            let y = rng.random_range(0.0..(h - bh).max(1.0));
            let score = rng.random_range(0.0..1.0);
            out.push(ScoredDetection::new(
                BoundingBox::from_xywh(x, y, bw, bh)?,
                score,
                self.false_positive_category,
                frame.index,
            )?);
        }
        Ok(out)
    }
}

/// Class index to category mapping for a YOLO head.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassMap {
    /// Every class is smoke.
    Smoke,
    /// COCO ordering: car 2, bus 5, truck 7; other classes are dropped.
    CocoVehicles,
    Explicit(Vec<Option<Category>>),
}

impl ClassMap {
    fn category(&self, class: usize) -> Option<Category> {
        match self {
            ClassMap::Smoke => Some(Category::Smoke),
            ClassMap::CocoVehicles => match class {
                2 => Some(Category::Car),
                5 => Some(Category::Bus),
                7 => Some(Category::Truck),
                _ => None,
            },
            ClassMap::Explicit(v) => v.get(class).copied().flatten(),
        }
    }
}

/// A [`Network`] run on a square resize of the frame, with anchor decoding.
pub struct YoloDetector {
    pub network: Network,
    pub input_size: u32,
    pub classes: ClassMap,
    /// Objectness-times-class floor applied before post-processing.
    pub candidate_floor: f64,
}

impl YoloDetector {
    pub fn new(network: Network, input_size: u32, classes: ClassMap) -> Result<Self> {
        if input_size == 0 || !input_size.is_multiple_of(32) {
            return Err(Error::Config(format!("detector input size {input_size} must be a positive multiple of 32")));
        }
        Ok(YoloDetector {
            network,
            input_size,
            classes,
            candidate_floor: 0.001,
        })
    }

    fn preprocess(&self, frame: &Frame) -> Tensor {
        let s = self.input_size;
        let resized = imageops::resize(&*frame.image, s, s, FilterType::Triangle);
        let plane = (s * s) as usize;
        let mut data = vec![0f32; 3 * plane];
        for (i, p) in resized.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = p[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec([1, 3, 1, s as usize, s as usize], data).expect("preprocess shape")
    }
}

/// Decodes one head map into `(box in network pixels, class, score)`.
pub fn decode_scale(out: &ScaleOutput, num_classes: usize, floor: f64) -> Vec<([f64; 4], usize, f64)> {
    let [n, c, _, h, w] = out.map.shape();
    assert_eq!(n, 1);
    assert_eq!(c, 3 * (num_classes + 5));
    let plane = h * w;
    let data = out.map.data();
    let at = |a: usize, k: usize, i: usize| sigmoid(data[(a * (num_classes + 5) + k) * plane + i]) as f64;
    let stride = out.stride as f64;
    let mut res = Vec::new();
    for a in 0..3 {
        for i in 0..plane {
            let obj = at(a, 4, i);
            if obj < floor {
                continue;
            }
            let (cls, cls_p) = (0..num_classes)
                .map(|k| (k, at(a, 5 + k, i)))
                .fold((0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best });
            let score = obj * cls_p;
            if score < floor {
                continue;
            }
            let (gx, gy) = ((i % w) as f64, (i / w) as f64);
            let cx = (2.0 * at(a, 0, i) - 0.5 + gx) * stride;
            let cy = (2.0 * at(a, 1, i) - 0.5 + gy) * stride;
            let bw = (2.0 * at(a, 2, i)).powi(2) * out.anchors[a][0];
            let bh = (2.0 * at(a, 3, i)).powi(2) * out.anchors[a][1];
            res.push(([cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0], cls, score));
        }
    }
    res
}

impl DetectionModel for YoloDetector {
    fn name(&self) -> &str {
        &self.network.spec.name
    }

    fn detect(&mut self, frame: &Frame) -> Result<Vec<ScoredDetection>> {
        let num_classes = self
            .network
            .spec
            .layers
            .iter()
            .find_map(|l| match l.kind {
                super::spec::LayerKind::Detect { num_classes, .. } => Some(num_classes),
                _ => None,
            })
            .ok_or_else(|| Error::Config("network has no detection head".into()))?;
        let heads = self.network.forward(&self.preprocess(frame))?;
        let sx = frame.width() as f64 / self.input_size as f64;
        let sy = frame.height() as f64 / self.input_size as f64;
        let mut out = Vec::new();
        for head in &heads {
            for (b, cls, score) in decode_scale(head, num_classes, self.candidate_floor) {
                let Some(category) = self.classes.category(cls) else {
                    continue;
                };
                let Ok(bbox) = BoundingBox::new(b[0] * sx, b[1] * sy, b[2] * sx, b[3] * sy) else {
                    continue;
                };
                out.push(ScoredDetection::new(bbox, score.clamp(0.0, 1.0), category, frame.index)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{generate_fixture, EventKind, FixtureEvent, FixtureScript};
    use crate::arch::spec::build_yolov5tiny;
    use image::RgbImage;

    fn det(b: [f64; 4], score: f64, category: Category) -> ScoredDetection {
        ScoredDetection::new(BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(), score, category, 0).unwrap()
    }

    struct Fixed(Vec<ScoredDetection>);

    impl DetectionModel for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn detect(&mut self, _: &Frame) -> Result<Vec<ScoredDetection>> {
            Ok(self.0.clone())
        }
    }

    fn frame(w: u32, h: u32) -> Frame {
        Frame::new(0, RgbImage::new(w, h))
    }

    #[test]
    fn threshold_above_one_empties() {
        let mut h = DetectorHandle::new(Fixed(vec![det([0.0, 0.0, 5.0, 5.0], 1.0, Category::Smoke)]), 0.2);
        assert!(run_detector(&mut h, &frame(10, 10), 1.1).unwrap().is_empty());
    }

    #[test]
    fn duplicate_boxes_suppressed_per_class() {
        let b = [1.0, 1.0, 6.0, 6.0];
        let mut h = DetectorHandle::new(
            Fixed(vec![
                det(b, 0.8, Category::Smoke),
                det(b, 0.9, Category::Smoke),
                det(b, 0.7, Category::Car),
            ]),
            0.2,
        );
        let out = h.detect(&frame(10, 10)).unwrap();
        let got: Vec<_> = out.iter().map(|d| (d.score, d.category)).collect();
        assert_eq!(got, vec![(0.9, Category::Smoke), (0.7, Category::Car)]);
    }

    #[test]
    fn boxes_clipped_and_sorted() {
        let mut h = DetectorHandle::new(
            Fixed(vec![
                det([-5.0, 2.0, 4.0, 20.0], 0.3, Category::Car),
                det([6.0, 6.0, 9.0, 9.0], 0.5, Category::Car),
                det([12.0, 12.0, 15.0, 15.0], 0.9, Category::Car),
            ]),
            0.2,
        );
        let out = h.detect(&frame(10, 10)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.5);
        assert_eq!(out[1].bbox.to_array(), [0.0, 2.0, 4.0, 10.0]);
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let mut h = DetectorHandle::new(Fixed(vec![]), 0.2).with_expected_size(20, 10);
        assert!(matches!(h.detect(&frame(10, 10)), Err(Error::Shape(_))));
    }

    #[test]
    fn oracle_passes_planted_boxes() {
        let script = FixtureScript::new(160, 120, 6).event(FixtureEvent::new(
            EventKind::SmokeWithVehicle,
            (1, 4),
            [40.0, 20.0, 80.0, 50.0],
        ));
        let fx = generate_fixture(&script, 1).unwrap();
        let mut smoke = DetectorHandle::new(OracleDetector::smoke(&fx.truth), 0.2);
        let mut vehicle = DetectorHandle::new(OracleDetector::vehicle(&fx.truth), 0.2);
        for (i, img) in fx.frames.iter().enumerate() {
            let f = Frame::new(i as u64, img.clone());
            let s = smoke.detect(&f).unwrap();
            let planted = fx.truth[i].of_kind(TruthKind::Smoke).count();
            assert_eq!(s.len(), planted);
            assert!(s.iter().all(|d| d.score == 0.99));
            assert_eq!(vehicle.detect(&f).unwrap().len(), fx.truth[i].of_kind(TruthKind::Vehicle).count());
        }
    }

    #[test]
    fn noisy_detector_reproducible() {
        let script = FixtureScript::new(160, 120, 3).event(FixtureEvent::new(
            EventKind::SmokeWithVehicle,
            (0, 2),
            [40.0, 20.0, 80.0, 50.0],
        ));
        let fx = generate_fixture(&script, 1).unwrap();
        let run = || {
            let mut m = NoisyDetector::new(OracleDetector::smoke(&fx.truth), 5);
            m.false_positive_rate = 2.0;
            let mut h = DetectorHandle::new(m, 0.0);
            (0..3)
                .map(|i| h.detect(&Frame::new(i, fx.frames[i as usize].clone())).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn yolo_detector_contract() {
        let net = Network::new(&build_yolov5tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let yolo = YoloDetector::new(net, 64, ClassMap::Smoke).unwrap();
        let mut h = DetectorHandle::new(yolo, 0.0);
        let mut img = RgbImage::new(80, 60);
        img.pixels_mut().enumerate().for_each(|(i, p)| p.0 = [(i % 251) as u8, 90, 30]);
        let f = Frame::new(4, img);
        let a = h.detect(&f).unwrap();
        assert_eq!(a, h.detect(&f).unwrap());
        assert!(!a.is_empty());
        for w in a.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for d in &a {
            assert!(d.bbox.is_inside(80.0, 60.0));
            assert!((0.0..=1.0).contains(&d.score));
            assert_eq!(d.frame_index, 4);
        }
    }
}
