//! Deterministic synthetic video fixtures with exact ground truth.
//!
//! Flat-shaded scenes: a graded road background with seeded Gaussian pixel
//! noise, vehicles as solid rectangles, shadows as dark rectangles and smoke
//! as a light gray translucent blob whose density varies from frame to frame.
//! Trajectories depend only on the script; the seed only drives the noise, so
//! the ground truth is identical for every seed.

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Category, VideoSegments};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SmokeWithVehicle,
    SmokeWithoutVehicle,
    ShadowDecoy,
    VehicleOnly,
}

fn default_smoke_scale() -> f64 {
    0.8
}

fn default_smoke_offset() -> f64 {
    -4.0
}

/// One planted event. `bbox` is the box at `start_frame`: the vehicle for
/// `smoke_with_vehicle` and `vehicle_only`, the smoke blob for
/// `smoke_without_vehicle`, and the shadow for `shadow_decoy`. The box moves
/// by `velocity` pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEvent {
    pub kind: EventKind,
    pub start_frame: u64,
    pub end_frame: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Vehicle category; defaults to car.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    /// Smoke height as a fraction of the vehicle height.
    #[serde(default = "default_smoke_scale")]
    pub smoke_scale: f64,
    /// Offset of the smoke top edge below the vehicle bottom edge; negative
    /// values make the two overlap.
    #[serde(default = "default_smoke_offset")]
    pub smoke_offset: f64,
}

impl FixtureEvent {
    pub fn new(kind: EventKind, frames: (u64, u64), bbox: [f64; 4]) -> Self {
        FixtureEvent {
            kind,
            start_frame: frames.0,
            end_frame: frames.1,
            bbox,
            velocity: [0.0, 0.0],
            category: None,
            smoke_scale: default_smoke_scale(),
            smoke_offset: default_smoke_offset(),
        }
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.velocity = [vx, vy];
        self
    }

    fn primary_box(&self, frame: u64) -> Result<BoundingBox> {
        let dt = frame.saturating_sub(self.start_frame) as f64;
        let [x1, y1, x2, y2] = self.bbox;
        let (dx, dy) = (self.velocity[0] * dt, self.velocity[1] * dt);
        BoundingBox::new(x1 + dx, y1 + dy, x2 + dx, y2 + dy)
    }

    fn smoke_below(&self, vehicle: &BoundingBox) -> Result<BoundingBox> {
        let (cx, _) = vehicle.center();
        let w = 0.7 * vehicle.width();
        let top = vehicle.y2() + self.smoke_offset;
        BoundingBox::new(
            cx - w / 2.0,
            top,
            cx + w / 2.0,
            top + self.smoke_scale * vehicle.height(),
        )
    }

    /// Ground-truth boxes of this event at `frame`, assumed inside its range.
    fn boxes_at(&self, index: usize, frame: u64) -> Result<Vec<TruthBox>> {
        let primary = self.primary_box(frame)?;
        let vehicle_cat = self.category.unwrap_or(Category::Car);
        let tb = |kind, category, attached, bbox| TruthBox {
            kind,
            event: index,
            category,
            attached,
            bbox,
        };
        Ok(match self.kind {
            EventKind::SmokeWithVehicle => vec![
                tb(TruthKind::Vehicle, vehicle_cat, true, primary),
                tb(
                    TruthKind::Smoke,
                    Category::Smoke,
                    true,
                    self.smoke_below(&primary)?,
                ),
            ],
            EventKind::VehicleOnly => vec![tb(TruthKind::Vehicle, vehicle_cat, false, primary)],
            EventKind::SmokeWithoutVehicle => {
                vec![tb(TruthKind::Smoke, Category::Smoke, false, primary)]
            }
            EventKind::ShadowDecoy => vec![tb(TruthKind::Decoy, Category::Smoke, false, primary)],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureScript {
    #[serde(default = "default_video_id")]
    pub video_id: String,
    #[serde(default = "default_scene_id")]
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    /// Standard deviation of the per-pixel Gaussian noise, in 8-bit levels.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub events: Vec<FixtureEvent>,
}

fn default_video_id() -> String {
    "fixture".into()
}
fn default_scene_id() -> String {
    "synthetic".into()
}
fn default_noise() -> f64 {
    4.0
}

impl FixtureScript {
    pub fn new(width: u32, height: u32, num_frames: u64) -> Self {
        FixtureScript {
            video_id: default_video_id(),
            scene_id: default_scene_id(),
            width,
            height,
            num_frames,
            noise_sigma: default_noise(),
            events: Vec::new(),
        }
    }

    pub fn event(mut self, event: FixtureEvent) -> Self {
        self.events.push(event);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_frames == 0 {
            return Err(Error::Validation("fixture frame size and length must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(format!("noise_sigma {} invalid", self.noise_sigma)));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, ev) in self.events.iter().enumerate() {
            if ev.start_frame > ev.end_frame || ev.end_frame >= self.num_frames {
                return Err(Error::Validation(format!(
                    "event {i}: frame range [{}, {}] outside [0, {})",
                    ev.start_frame, ev.end_frame, self.num_frames
                )));
            }
            if let Some(c) = ev.category {
                if !c.is_vehicle() {
                    return Err(Error::Validation(format!("event {i}: category must be a vehicle")));
                }
            }
            if ev.smoke_scale <= 0.0 || !ev.smoke_offset.is_finite() {
                return Err(Error::Validation(format!("event {i}: invalid smoke geometry")));
            }
            // Motion is linear, so checking both ends covers the whole range.
            for f in [ev.start_frame, ev.end_frame] {
                for tb in ev
                    .boxes_at(i, f)
                    .map_err(|e| Error::Validation(format!("event {i}: {e}")))?
                {
                    if !tb.bbox.is_inside(w, h) {
                        return Err(Error::Validation(format!(
                            "event {i}: box {:?} at frame {f} leaves the {}x{} frame",
                            tb.bbox.to_array(),
                            self.width,
                            self.height
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    Smoke,
    Vehicle,
    Decoy,
}

/// One rendered object. `attached` marks smoke emitted by a vehicle and the
/// vehicle emitting it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub kind: TruthKind,
    pub event: usize,
    pub category: Category,
    pub attached: bool,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: u64,
    pub boxes: Vec<TruthBox>,
}

impl FrameTruth {
    pub fn of_kind(&self, kind: TruthKind) -> impl Iterator<Item = &TruthBox> + '_ {
        self.boxes.iter().filter(move |b| b.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub script: FixtureScript,
    pub frames: Vec<RgbImage>,
    /// Smoky-vehicle segments: the merged frame ranges of `smoke_with_vehicle`
    /// events. Free-floating smoke and decoys are negatives.
    pub segments: VideoSegments,
    pub truth: Vec<FrameTruth>,
}

const VEHICLE_COLORS: [(Category, [u8; 3]); 3] = [
    (Category::Car, [40, 70, 160]),
    (Category::Bus, [200, 160, 40]),
    (Category::Truck, [150, 45, 40]),
];
const SMOKE_GRAY: f64 = 200.0;
const SHADOW_FACTOR: f64 = 0.3;

/// Renders `script` into frames plus ground truth.
pub fn generate_fixture(script: &FixtureScript, seed: u64) -> Result<Fixture> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, script.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Validation(e.to_string()))?;
    let (w, h) = (script.width, script.height);

    let mut frames = Vec::with_capacity(script.num_frames as usize);
    let mut truth = Vec::with_capacity(script.num_frames as usize);
    for f in 0..script.num_frames {
        let mut boxes = Vec::new();
        for (i, ev) in script.events.iter().enumerate() {
            if (ev.start_frame..=ev.end_frame).contains(&f) {
                boxes.extend(ev.boxes_at(i, f)?);
            }
        }

        let mut canvas = vec![[0f64; 3]; (w * h) as usize];
        for y in 0..h {
            let base = 95.0 + 45.0 * y as f64 / h as f64;
            for x in 0..w {
                let px = &mut canvas[(y * w + x) as usize];
                for c in px.iter_mut() {
                    *c = base;
                }
            }
        }
        // Painter's order: shadows, vehicles, then translucent smoke on top.
        for tb in boxes.iter().filter(|b| b.kind == TruthKind::Decoy) {
            for_pixels(&tb.bbox, w, h, |x, y| {
                for c in canvas[(y * w + x) as usize].iter_mut() {
                    *c *= SHADOW_FACTOR;
                }
            });
        }
        for tb in boxes.iter().filter(|b| b.kind == TruthKind::Vehicle) {
            let color = VEHICLE_COLORS
                .iter()
                .find(|(c, _)| *c == tb.category)
                .map(|(_, rgb)| *rgb)
                .unwrap_or([40, 70, 160]);
            for_pixels(&tb.bbox, w, h, |x, y| {
                canvas[(y * w + x) as usize] = color.map(f64::from);
            });
        }
        for tb in boxes.iter().filter(|b| b.kind == TruthKind::Smoke) {
            let (cx, cy) = tb.bbox.center();
            let (rx, ry) = (tb.bbox.width() / 2.0, tb.bbox.height() / 2.0);
            let phase = f as f64 * 0.9 + tb.event as f64;
            for_pixels(&tb.bbox, w, h, |x, y| {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let falloff = (1.0 - 0.6 * (dx * dx + dy * dy)).max(0.0);
                let swirl = 0.75
                    + 0.25 * (phase + 0.15 * x as f64 + 0.11 * y as f64).sin()
                        * (0.7 * phase - 0.09 * y as f64).cos();
                let alpha = (0.75 * falloff * swirl).clamp(0.0, 1.0);
                for c in canvas[(y * w + x) as usize].iter_mut() {
                    *c = *c * (1.0 - alpha) + SMOKE_GRAY * alpha;
                }
            });
        }

        let mut img = RgbImage::new(w, h);
        for (i, p) in img.pixels_mut().enumerate() {
            let px = canvas[i];
            let mut out = [0u8; 3];
            for c in 0..3 {
                let v = if script.noise_sigma > 0.0 {
                    px[c] + noise.sample(&mut rng)
                } else {
                    px[c]
                };
                out[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            *p = Rgb(out);
        }
        frames.push(img);
        truth.push(FrameTruth { frame: f, boxes });
    }

    Ok(Fixture {
        segments: smoky_segments(script),
        script: script.clone(),
        frames,
        truth,
    })
}

/// Visits pixels whose centers fall inside `b`.
fn for_pixels(b: &BoundingBox, w: u32, h: u32, mut f: impl FnMut(u32, u32)) {
    let lo = |v: f64| (v - 0.5).ceil().max(0.0) as u32;
    let hi = |v: f64, lim: u32| ((v - 0.5).ceil().max(0.0) as u32).min(lim);
    for y in lo(b.y1())..hi(b.y2(), h) {
        for x in lo(b.x1())..hi(b.x2(), w) {
            f(x, y);
        }
    }
}

fn smoky_segments(script: &FixtureScript) -> VideoSegments {
    let mut ranges: Vec<(u64, u64)> = script
        .events
        .iter()
        .filter(|e| e.kind == EventKind::SmokeWithVehicle)
        .map(|e| (e.start_frame, e.end_frame))
        .collect();
    ranges.sort_unstable();
    let mut merged: Vec<[u64; 2]> = Vec::new();
    for (s, e) in ranges {
        match merged.last_mut() {
            Some(last) if s <= last[1] + 1 => last[1] = last[1].max(e),
            _ => merged.push([s, e]),
        }
    }
    VideoSegments {
        video_id: script.video_id.clone(),
        scene_id: script.scene_id.clone(),
        num_frames: script.num_frames,
        segments: merged,
    }
}

/// Event counts for [`FixtureScript::scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    pub smoke_with_vehicle: usize,
    pub smoke_without_vehicle: usize,
    /// Each decoy is a shadow just below a smoke-free vehicle.
    pub shadow_decoys: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            width: 640,
            height: 360,
            num_frames: 200,
            smoke_with_vehicle: 3,
            smoke_without_vehicle: 3,
            shadow_decoys: 5,
        }
    }
}

impl FixtureScript {
    /// A seeded layout of `spec`'s events in disjoint time slots, so that
    /// decoy and free-smoke frames are negatives. Vehicles drive slowly
    /// downward; free smoke drifts with no vehicle in view.
    pub fn scenario(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        use rand::Rng;

        let mut kinds = Vec::new();
        kinds.extend(std::iter::repeat_n(EventKind::SmokeWithVehicle, spec.smoke_with_vehicle));
        kinds.extend(std::iter::repeat_n(EventKind::SmokeWithoutVehicle, spec.smoke_without_vehicle));
        kinds.extend(std::iter::repeat_n(EventKind::ShadowDecoy, spec.shadow_decoys));
        let n = kinds.len() as u64;
        if n == 0 || spec.num_frames < 4 * n {
            return Err(Error::Validation(format!(
                "{} frames cannot hold {n} events of at least 4 frames",
                spec.num_frames
            )));
        }
        let (w, h) = (spec.width as f64, spec.height as f64);
        if w < 160.0 || h < 120.0 {
            return Err(Error::Validation("scenario frames must be at least 160x120".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        kinds.shuffle(&mut rng);
        let slot = spec.num_frames / n;
        let mut script = FixtureScript::new(spec.width, spec.height, spec.num_frames);
        script.video_id = format!("scenario_{seed}");
        let categories = [Category::Car, Category::Bus, Category::Truck];
        for (i, kind) in kinds.into_iter().enumerate() {
            let start = i as u64 * slot + 1;
            let end = start + slot - 3;
            let len = (end - start) as f64;
            let vw = rng.random_range(0.10..0.16) * w;
            let vh = 0.6 * vw;
            let vx = rng.random_range(-1.5..1.5);
            let vy = rng.random_range(0.2..0.8);
            // Room for the vehicle, the stack below it and the motion.
            let stack = 1.9 * vh;
            let x_lo = 4.0 + (-vx * len).max(0.0);
            let x_hi = w - vw - 4.0 - (vx * len).max(0.0);
            let y_hi = h - stack - 4.0 - vy * len;
            let x = rng.random_range(x_lo..x_hi.max(x_lo + 1.0));
            let y = rng.random_range(4.0..y_hi.max(5.0));
            let vehicle = [x, y, x + vw, y + vh];
            let category = Some(categories[rng.random_range(0..categories.len())]);
            match kind {
                EventKind::SmokeWithVehicle => {
                    let mut ev = FixtureEvent::new(kind, (start, end), vehicle).with_velocity(vx, vy);
                    ev.category = category;
                    script.events.push(ev);
                }
                EventKind::SmokeWithoutVehicle => {
                    let (sw, sh) = (0.7 * vw, 0.8 * vh);
                    let sx = x + 0.15 * vw;
                    let sy = y + vh;
                    script
                        .events
                        .push(FixtureEvent::new(kind, (start, end), [sx, sy, sx + sw, sy + sh]).with_velocity(vx, vy));
                }
                _ => {
                    let mut car = FixtureEvent::new(EventKind::VehicleOnly, (start, end), vehicle).with_velocity(vx, vy);
                    car.category = category;
                    script.events.push(car);
                    let (sw, sh) = (0.7 * vw, 0.5 * vh);
                    let sx = x + 0.15 * vw;
                    let sy = y + vh + 6.0;
                    script.events.push(
                        FixtureEvent::new(EventKind::ShadowDecoy, (start, end), [sx, sy, sx + sw, sy + sh])
                            .with_velocity(vx, vy),
                    );
                }
            }
        }
        script.validate()?;
        Ok(script)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_smoky() -> FixtureScript {
        FixtureScript::new(160, 120, 12).event(FixtureEvent::new(
            EventKind::SmokeWithVehicle,
            (5, 9),
            [40.0, 10.0, 90.0, 40.0],
        ))
    }

    #[test]
    fn segments_mirror_script() {
        let fx = generate_fixture(&one_smoky(), 1).unwrap();
        assert_eq!(fx.segments.segments, vec![[5, 9]]);
        assert_eq!(fx.frames.len(), 12);
        assert!(fx.truth[4].boxes.is_empty());
        assert_eq!(fx.truth[5].boxes.len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_fixture(&one_smoky(), 7).unwrap();
        let b = generate_fixture(&one_smoky(), 7).unwrap();
        let c = generate_fixture(&one_smoky(), 8).unwrap();
        for i in 0..a.frames.len() {
            assert_eq!(a.frames[i].as_raw(), b.frames[i].as_raw());
        }
        assert_ne!(a.frames[0].as_raw(), c.frames[0].as_raw());
        assert_eq!(a.truth, c.truth);
        assert_eq!(a.segments, c.segments);
    }

    #[test]
    fn decoy_only_has_no_segments() {
        let s = FixtureScript::new(100, 100, 5).event(FixtureEvent::new(
            EventKind::ShadowDecoy,
            (0, 4),
            [10.0, 10.0, 30.0, 30.0],
        ));
        let fx = generate_fixture(&s, 0).unwrap();
        assert!(fx.segments.segments.is_empty());
        assert!(fx.truth.iter().all(|t| t.of_kind(TruthKind::Decoy).count() == 1));
    }

    #[test]
    fn out_of_frame_event_rejected() {
        let s = FixtureScript::new(100, 100, 10).event(
            FixtureEvent::new(EventKind::VehicleOnly, (0, 9), [10.0, 10.0, 30.0, 30.0])
                .with_velocity(10.0, 0.0),
        );
        assert!(matches!(generate_fixture(&s, 0), Err(Error::Validation(_))));
        let s = FixtureScript::new(100, 100, 10).event(FixtureEvent::new(
            EventKind::VehicleOnly,
            (0, 10),
            [10.0, 10.0, 30.0, 30.0],
        ));
        assert!(s.validate().is_err());
    }

    #[test]
    fn rendered_content_matches_truth() {
        let mut s = FixtureScript::new(120, 100, 3)
            .event(FixtureEvent::new(EventKind::ShadowDecoy, (0, 2), [10.0, 60.0, 40.0, 80.0]))
            .event(FixtureEvent::new(EventKind::VehicleOnly, (0, 2), [70.0, 10.0, 100.0, 30.0]));
        s.noise_sigma = 0.0;
        let fx = generate_fixture(&s, 0).unwrap();
        let img = &fx.frames[1];
        assert_eq!(img.get_pixel(80, 20).0, [40, 70, 160]);
        let inside = img.get_pixel(20, 70).0[0];
        let outside = img.get_pixel(20, 90).0[0];
        assert!(inside < outside / 2);
        assert_eq!(img.get_pixel(9, 70).0[0], img.get_pixel(9, 70).0[1]);
    }

    #[test]
    fn overlapping_events_merge_segments() {
        let s = FixtureScript::new(300, 200, 30)
            .event(FixtureEvent::new(EventKind::SmokeWithVehicle, (2, 8), [10.0, 10.0, 60.0, 40.0]))
            .event(FixtureEvent::new(EventKind::SmokeWithVehicle, (6, 12), [150.0, 10.0, 200.0, 40.0]))
            .event(FixtureEvent::new(EventKind::SmokeWithVehicle, (20, 21), [150.0, 10.0, 200.0, 40.0]));
        let fx = generate_fixture(&s, 0).unwrap();
        assert_eq!(fx.segments.segments, vec![[2, 12], [20, 21]]);
    }

    #[test]
    fn scenario_layout() {
        let spec = ScenarioSpec::default();
        let script = FixtureScript::scenario(&spec, 3).unwrap();
        let count = |k| script.events.iter().filter(|e| e.kind == k).count();
        assert_eq!(count(EventKind::SmokeWithVehicle), 3);
        assert_eq!(count(EventKind::SmokeWithoutVehicle), 3);
        assert_eq!(count(EventKind::ShadowDecoy), 5);
        assert_eq!(count(EventKind::VehicleOnly), 5);
        assert_eq!(FixtureScript::scenario(&spec, 3).unwrap(), script);
        let fx = generate_fixture(&script, 0).unwrap();
        assert_eq!(fx.segments.segments.len(), 3);
        assert!(FixtureScript::scenario(&ScenarioSpec { num_frames: 20, ..spec }, 0).is_err());
    }

    #[test]
    fn script_toml_roundtrip() {
        let s = one_smoky();
        let text = toml::to_string(&s).unwrap();
        let back: FixtureScript = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
