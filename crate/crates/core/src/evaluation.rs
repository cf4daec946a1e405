//! Frame-level detection rate, false alarm rate, precision and F1.
//!
//! A frame is positive when it lies inside an annotated smoky segment. Ratios
//! whose denominator is zero are reported as undefined, with the reason,
//! rather than as 0 or 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::{Category, FrameLabelSet, ScoredDetection, VideoSegments};
use crate::cascade::{read_verdicts, verdict_video_id, FrameVerdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Counts predicted against true frame labels.
pub fn confusion(verdicts: &[bool], labels: &FrameLabelSet) -> Result<ConfusionCounts> {
    if verdicts.len() != labels.labels.len() {
        return Err(Error::Validation(format!(
            "video {:?}: {} verdicts for {} labeled frames",
            labels.video_id,
            verdicts.len(),
            labels.labels.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&v, &l) in verdicts.iter().zip(&labels.labels) {
        match (v, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// A ratio, or the reason it has no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ratio {
    Value(f64),
    Undefined { undefined: String },
}

impl Ratio {
    fn of(num: u64, den: u64, reason: &str) -> Ratio {
        if den == 0 {
            Ratio::undefined(reason)
        } else {
            Ratio::Value(num as f64 / den as f64)
        }
    }

    pub fn undefined(reason: &str) -> Ratio {
        Ratio::Undefined {
            undefined: reason.to_string(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(*v),
            Ratio::Undefined { .. } => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value().is_some()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v:.4}"),
            Ratio::Undefined { undefined } => write!(f, "undefined ({undefined})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dr: Ratio,
    pub far: Ratio,
    pub precision: Ratio,
    pub f1: Ratio,
}

/// F1 as the harmonic mean of precision and detection rate.
pub fn f1_score(precision: f64, dr: f64) -> Option<f64> {
    let s = precision + dr;
    (s > 0.0).then(|| 2.0 * precision * dr / s)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let dr = Ratio::of(c.tp, c.positives(), "no positive frames");
    let far = Ratio::of(c.fp, c.negatives(), "no negative frames");
    let precision = Ratio::of(c.tp, c.tp + c.fp, "no frames predicted positive");
    let f1 = match (precision.value(), dr.value()) {
        (Some(p), Some(d)) => match f1_score(p, d) {
            Some(v) => Ratio::Value(v),
            None => Ratio::undefined("precision and detection rate are both zero"),
        },
        _ => Ratio::undefined("precision or detection rate undefined"),
    };
    Metrics { dr, far, precision, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Counts are summed over all videos, then ratios computed once.
    #[default]
    Pooled,
    /// Ratios are computed per scene, then averaged over the scenes where
    /// each is defined.
    SceneAveraged,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Aggregation::Pooled),
            "scene" | "scene_averaged" => Ok(Aggregation::SceneAveraged),
            other => Err(Error::Validation(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Pooled => "pooled",
            Aggregation::SceneAveraged => "scene_averaged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub videos: Vec<String>,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    /// Summed over every video, whatever the aggregation.
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub per_scene: BTreeMap<String, SceneReport>,
}

/// Binary verdicts of one video in frame order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoVerdicts {
    pub video_id: String,
    pub verdicts: Vec<bool>,
}

impl VideoVerdicts {
    /// Frame records must cover `0..n` exactly once.
    pub fn from_frames(video_id: impl Into<String>, frames: &[FrameVerdict]) -> Result<Self> {
        let video_id = video_id.into();
        let mut verdicts = vec![None; frames.len()];
        for f in frames {
            let slot = verdicts.get_mut(f.frame as usize).ok_or_else(|| {
                Error::Validation(format!("video {video_id:?}: frame {} outside 0..{}", f.frame, frames.len()))
            })?;
            if slot.replace(f.verdict).is_some() {
                return Err(Error::Validation(format!("video {video_id:?}: frame {} appears twice", f.frame)));
            }
        }
        let verdicts = verdicts.into_iter().map(|v| v.expect("every slot filled")).collect();
        Ok(VideoVerdicts { video_id, verdicts })
    }
}

fn mean_defined<'a>(ratios: impl Iterator<Item = &'a Ratio>, reason: &str) -> Ratio {
    let vals: Vec<f64> = ratios.filter_map(Ratio::value).collect();
    if vals.is_empty() {
        Ratio::undefined(reason)
    } else {
        Ratio::Value(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Scores every video against its segment annotations. Each video must have
/// exactly one annotation entry and vice versa.
pub fn evaluate_run(runs: &[VideoVerdicts], annotations: &[VideoSegments], mode: Aggregation) -> Result<EvalReport> {
    let annotated: BTreeMap<&str, &VideoSegments> = annotations.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let predicted: BTreeSet<&str> = runs.iter().map(|r| r.video_id.as_str()).collect();
    if annotated.len() != annotations.len() || predicted.len() != runs.len() {
        return Err(Error::Validation("duplicate video ids among verdicts or annotations".into()));
    }
    let missing_truth: Vec<&str> = predicted.iter().copied().filter(|id| !annotated.contains_key(id)).collect();
    let missing_verdicts: Vec<&str> = annotated.keys().copied().filter(|id| !predicted.contains(id)).collect();
    if !missing_truth.is_empty() || !missing_verdicts.is_empty() {
        return Err(Error::Validation(format!(
            "video ids do not match: verdicts without annotations {missing_truth:?}, annotations without verdicts {missing_verdicts:?}"
        )));
    }

    let mut scenes: BTreeMap<String, (Vec<String>, ConfusionCounts)> = BTreeMap::new();
    for run in runs {
        let ann = annotated[run.video_id.as_str()];
        let counts = confusion(&run.verdicts, &ann.labels()?)?;
        let entry = scenes.entry(ann.scene_id.clone()).or_default();
        entry.0.push(run.video_id.clone());
        entry.1 += counts;
    }
    let per_scene: BTreeMap<String, SceneReport> = scenes
        .into_iter()
        .map(|(scene, (videos, counts))| {
            (
                scene,
                SceneReport {
                    videos,
                    counts,
                    metrics: metrics(&counts),
                },
            )
        })
        .collect();
    let counts: ConfusionCounts = per_scene.values().map(|s| s.counts).sum();
    let metrics = match mode {
        Aggregation::Pooled => metrics(&counts),
        Aggregation::SceneAveraged => {
            let m = || per_scene.values().map(|s| &s.metrics);
            Metrics {
                dr: mean_defined(m().map(|m| &m.dr), "undefined in every scene"),
                far: mean_defined(m().map(|m| &m.far), "undefined in every scene"),
                precision: mean_defined(m().map(|m| &m.precision), "undefined in every scene"),
                f1: mean_defined(m().map(|m| &m.f1), "undefined in every scene"),
            }
        }
    };
    Ok(EvalReport {
        aggregation: mode,
        counts,
        metrics,
        per_scene,
    })
}

/// Reads `<video>.verdicts.jsonl` files; the video id comes from the name.
pub fn load_verdict_files(paths: &[impl AsRef<Path>]) -> Result<Vec<VideoVerdicts>> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let id = verdict_video_id(p).ok_or_else(|| {
                Error::Validation(format!("{} is not named <video>.verdicts.jsonl", p.display()))
            })?;
            VideoVerdicts::from_frames(id, &read_verdicts(p)?)
        })
        .collect()
}

impl EvalReport {
    /// Fixed-width text table: the aggregate row, then one row per scene.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "aggregation: {}", self.aggregation);
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>6} {:>6} {:>6}  {:<10} {:<10} {:<10} {:<10}",
            "scope", "tp", "fp", "tn", "fn", "dr", "far", "precision", "f1"
        );
        let mut row = |name: &str, c: &ConfusionCounts, m: &Metrics| {
            let cell = |r: &Ratio| match r.value() {
                Some(v) => format!("{v:.4}"),
                None => "undefined".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>6} {:>6} {:>6}  {:<10} {:<10} {:<10} {:<10}",
                name,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                cell(&m.dr),
                cell(&m.far),
                cell(&m.precision),
                cell(&m.f1)
            );
        };
        row("all", &self.counts, &self.metrics);
        for (scene, s) in &self.per_scene {
            row(&format!("scene {scene}"), &s.counts, &s.metrics);
        }
        let reasons: BTreeSet<String> = [&self.metrics.dr, &self.metrics.far, &self.metrics.precision, &self.metrics.f1]
            .into_iter()
            .filter_map(|r| match r {
                Ratio::Undefined { undefined } => Some(undefined.clone()),
                Ratio::Value(_) => None,
            })
            .collect();
        for r in reasons {
            let _ = writeln!(out, "undefined: {r}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Frame verdicts at `threshold`: positive when any smoke detection on the
/// frame scores at least `threshold`.
pub fn verdicts_at(detections: &[ScoredDetection], num_frames: usize, threshold: f64) -> Vec<bool> {
    let mut v = vec![false; num_frames];
    for d in detections {
        if d.category == Category::Smoke && d.score >= threshold {
            if let Some(slot) = v.get_mut(d.frame_index as usize) {
                *slot = true;
            }
        }
    }
    v
}

/// Pooled metrics of raw detector output at each threshold.
pub fn threshold_sweep(
    videos: &[(&[ScoredDetection], &FrameLabelSet)],
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let counts = videos
                .iter()
                .map(|(dets, labels)| confusion(&verdicts_at(dets, labels.num_frames(), threshold), labels))
                .sum::<Result<ConfusionCounts>>()?;
            Ok(SweepRow {
                threshold,
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>9} {:>6} {:>6} {:>6} {:>6}  {:<10} {:<10} {:<10} {:<10}\n",
        "threshold", "tp", "fp", "tn", "fn", "dr", "far", "precision", "f1"
    );
    for r in rows {
        let cell = |x: &Ratio| x.value().map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:>9.3} {:>6} {:>6} {:>6} {:>6}  {:<10} {:<10} {:<10} {:<10}",
            r.threshold,
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_,
            cell(&r.metrics.dr),
            cell(&r.metrics.far),
            cell(&r.metrics.precision),
            cell(&r.metrics.f1)
        );
    }
    out
}
