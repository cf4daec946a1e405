//! Box geometry and smoke-to-vehicle assignment.
//!
//! A smoke region is assigned to a vehicle in front of it (vehicle center
//! strictly above the smoke center). If any such vehicle overlaps the smoke
//! box, the one with the largest IoU wins. Otherwise the vehicle whose
//! bottom-middle point is closest, on average, to the smoke box's top-left,
//! top-middle and top-right points is taken, provided that mean distance is
//! below `l_dist`.

use std::cmp::Ordering;

use crate::annotations::{BoundingBox, ScoredDetection};
use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Intersection over union, in `[0, 1]`; zero for disjoint or touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Top-left, top-middle and top-right corners of a smoke box.
pub fn smoke_anchor_points(smoke: &BoundingBox) -> [Point; 3] {
    let y = smoke.y1();
    [
        (smoke.x1(), y),
        ((smoke.x1() + smoke.x2()) / 2.0, y),
        (smoke.x2(), y),
    ]
}

/// Bottom-middle point of a vehicle box.
pub fn vehicle_anchor_point(vehicle: &BoundingBox) -> Point {
    ((vehicle.x1() + vehicle.x2()) / 2.0, vehicle.y2())
}

pub fn mean_anchor_distance(smoke: &BoundingBox, vehicle: &BoundingBox) -> f64 {
    let (vx, vy) = vehicle_anchor_point(vehicle);
    smoke_anchor_points(smoke)
        .iter()
        .map(|&(x, y)| (x - vx).hypot(y - vy))
        .sum::<f64>()
        / 3.0
}

/// True when the vehicle center lies strictly above the smoke center.
pub fn is_front_vehicle(smoke: &BoundingBox, vehicle: &BoundingBox) -> bool {
    vehicle.center().1 < smoke.center().1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Upper bound (exclusive) on the mean anchor distance, in pixels.
    pub l_dist: f64,
    pub front_filter_enabled: bool,
    /// Overlap rule fires when IoU exceeds this value.
    pub min_overlap_iou: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            l_dist: 50.0,
            front_filter_enabled: true,
            min_overlap_iou: 0.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_dist > 0.0 && self.l_dist.is_finite()) {
            return Err(Error::Config(format!("l_dist must be positive, got {}", self.l_dist)));
        }
        if !(0.0..1.0).contains(&self.min_overlap_iou) {
            return Err(Error::Config(format!(
                "min_overlap_iou must be in [0, 1), got {}",
                self.min_overlap_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Overlap,
    Proximity,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub smoke: ScoredDetection,
    pub vehicle: Option<ScoredDetection>,
    /// Position of the matched vehicle in the input list.
    pub vehicle_index: Option<usize>,
    pub rule: MatchRule,
    /// IoU for overlap matches, mean anchor distance for proximity matches,
    /// and the smallest rejected mean distance (if any candidate existed) for
    /// unmatched smoke.
    pub score_detail: Option<f64>,
}

impl MatchResult {
    pub fn is_matched(&self) -> bool {
        self.rule != MatchRule::Unmatched
    }
}

/// Deterministic tie break: higher vehicle score, then earlier position.
fn tie_break(a: (usize, &ScoredDetection), b: (usize, &ScoredDetection)) -> Ordering {
    b.1.score
        .partial_cmp(&a.1.score)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Assigns one smoke detection to at most one vehicle.
pub fn match_smoke_to_vehicles(
    smoke: &ScoredDetection,
    vehicles: &[ScoredDetection],
    cfg: &MatchConfig,
) -> MatchResult {
    let candidates: Vec<(usize, &ScoredDetection)> = vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| !cfg.front_filter_enabled || is_front_vehicle(&smoke.bbox, &v.bbox))
        .collect();

    let overlap = candidates
        .iter()
        .map(|&(i, v)| (i, v, iou(&smoke.bbox, &v.bbox)))
        .filter(|&(_, _, o)| o > cfg.min_overlap_iou)
        .min_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| tie_break((a.0, a.1), (b.0, b.1)))
        });
    if let Some((i, v, o)) = overlap {
        return MatchResult {
            smoke: *smoke,
            vehicle: Some(*v),
            vehicle_index: Some(i),
            rule: MatchRule::Overlap,
            score_detail: Some(o),
        };
    }

    let nearest = candidates
        .iter()
        .map(|&(i, v)| (i, v, mean_anchor_distance(&smoke.bbox, &v.bbox)))
        .min_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| tie_break((a.0, a.1), (b.0, b.1)))
        });
    match nearest {
        Some((i, v, d)) if d < cfg.l_dist => MatchResult {
            smoke: *smoke,
            vehicle: Some(*v),
            vehicle_index: Some(i),
            rule: MatchRule::Proximity,
            score_detail: Some(d),
        },
        other => MatchResult {
            smoke: *smoke,
            vehicle: None,
            vehicle_index: None,
            rule: MatchRule::Unmatched,
            score_detail: other.map(|(_, _, d)| d),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Category;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BoundingBox, cat: Category, score: f64) -> ScoredDetection {
        ScoredDetection::new(b, score, cat, 0).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn anchors() {
        assert_eq!(
            smoke_anchor_points(&bx(0.0, 0.0, 10.0, 4.0)),
            [(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)]
        );
        assert_eq!(
            smoke_anchor_points(&bx(2.0, 2.0, 4.0, 8.0)),
            [(2.0, 2.0), (3.0, 2.0), (4.0, 2.0)]
        );
        assert_eq!(vehicle_anchor_point(&bx(0.0, 0.0, 10.0, 4.0)), (5.0, 4.0));
        assert_eq!(vehicle_anchor_point(&bx(2.0, 2.0, 4.0, 8.0)), (3.0, 8.0));
    }

    #[test]
    fn mean_distance_worked_examples() {
        let d = mean_anchor_distance(&bx(0.0, 0.0, 10.0, 10.0), &bx(0.0, -10.0, 10.0, 0.0));
        assert!((d - 10.0 / 3.0).abs() < 1e-12);
        let d = mean_anchor_distance(&bx(4.0, 0.0, 6.0, 4.0), &bx(0.0, -8.0, 10.0, 0.0));
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn front_vehicle_strict() {
        // vehicle center (5,5), smoke center (5,10)
        assert!(is_front_vehicle(&bx(0.0, 5.0, 10.0, 15.0), &bx(0.0, 0.0, 10.0, 10.0)));
        assert!(!is_front_vehicle(&bx(0.0, 0.0, 10.0, 10.0), &bx(0.0, 5.0, 10.0, 15.0)));
        assert!(!is_front_vehicle(&bx(0.0, 0.0, 10.0, 10.0), &bx(20.0, 0.0, 30.0, 10.0)));
    }

    #[test]
    fn empty_vehicle_list_is_unmatched() {
        let s = det(bx(0.0, 0.0, 10.0, 10.0), Category::Smoke, 0.9);
        let r = match_smoke_to_vehicles(&s, &[], &MatchConfig::default());
        assert_eq!(r.rule, MatchRule::Unmatched);
        assert!(r.vehicle.is_none());
        assert!(r.score_detail.is_none());
    }

    #[test]
    fn overlap_beats_proximity() {
        let smoke = det(bx(100.0, 100.0, 140.0, 140.0), Category::Smoke, 0.9);
        // Overlaps the smoke top, center above the smoke center.
        let overlapping = det(bx(90.0, 60.0, 150.0, 110.0), Category::Truck, 0.5);
        // Non-overlapping, bottom-middle right above the smoke top-middle.
        let near = det(bx(110.0, 70.0, 130.0, 99.0), Category::Car, 0.99);
        let o = iou(&smoke.bbox, &overlapping.bbox);
        assert!(o > 0.0);
        assert!(mean_anchor_distance(&smoke.bbox, &near.bbox) < 50.0);
        let r = match_smoke_to_vehicles(&smoke, &[near, overlapping], &MatchConfig::default());
        assert_eq!(r.rule, MatchRule::Overlap);
        assert_eq!(r.vehicle_index, Some(1));
        assert_eq!(r.score_detail, Some(o));
    }

    #[test]
    fn proximity_picks_minimum() {
        let smoke = det(bx(100.0, 200.0, 140.0, 240.0), Category::Smoke, 0.9);
        // Anchor at (120, 170): distances to (100,200),(120,200),(140,200).
        let v1 = det(bx(100.0, 120.0, 140.0, 170.0), Category::Car, 0.5);
        let v2 = det(bx(100.0, 110.0, 140.0, 160.0), Category::Car, 0.5);
        let d1 = mean_anchor_distance(&smoke.bbox, &v1.bbox);
        let d2 = mean_anchor_distance(&smoke.bbox, &v2.bbox);
        assert!(d1 < d2 && d2 < 50.0);
        let r = match_smoke_to_vehicles(&smoke, &[v2, v1], &MatchConfig::default());
        assert_eq!(r.rule, MatchRule::Proximity);
        assert_eq!(r.vehicle_index, Some(1));
        let tight = MatchConfig {
            l_dist: d1,
            ..MatchConfig::default()
        };
        assert_eq!(match_smoke_to_vehicles(&smoke, &[v2, v1], &tight).rule, MatchRule::Unmatched);
    }

    #[test]
    fn front_filter_excludes_rear_vehicle() {
        let smoke = det(bx(100.0, 100.0, 140.0, 140.0), Category::Smoke, 0.9);
        let behind = det(bx(100.0, 130.0, 140.0, 200.0), Category::Bus, 0.9);
        let cfg = MatchConfig::default();
        assert_eq!(match_smoke_to_vehicles(&smoke, &[behind], &cfg).rule, MatchRule::Unmatched);
        let off = MatchConfig {
            front_filter_enabled: false,
            ..cfg
        };
        assert_eq!(match_smoke_to_vehicles(&smoke, &[behind], &off).rule, MatchRule::Overlap);
    }

    #[test]
    fn ties_prefer_score_then_position() {
        let smoke = det(bx(0.0, 100.0, 40.0, 140.0), Category::Smoke, 0.9);
        let a = det(bx(0.0, 60.0, 40.0, 110.0), Category::Car, 0.4);
        let b = det(bx(0.0, 60.0, 40.0, 110.0), Category::Car, 0.8);
        let cfg = MatchConfig::default();
        assert_eq!(match_smoke_to_vehicles(&smoke, &[a, b], &cfg).vehicle_index, Some(1));
        assert_eq!(match_smoke_to_vehicles(&smoke, &[a, a], &cfg).vehicle_index, Some(0));
    }
}
